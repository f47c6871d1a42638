"""Mixed forward process: Gaussian geometry, categorical node and edge labels.

Categorical transitions use the prior-weighted uniform kernel
``Q_t = (1 - beta_t) I + beta_t 1 pi^T`` acting on row vectors, so the
cumulative product has the closed form ``abar_t I + (1 - abar_t) 1 pi^T``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import rel_entr

from .errors import ConfigError, DegenerateRow, EmptyInput, InvalidDistribution
from .pore_graph import ACTIVE, PoreGraph, n_edges

BRANCHES = ("c", "e")
ROW_TOL = 1e-9
LOG_FLOOR = 1e-12


def _as_prior(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 1 or pi.size < 2 or np.any(pi < 0) or abs(pi.sum() - 1.0) > ROW_TOL:
        raise InvalidDistribution(f"prior must be a probability vector, got {pi}")
    return pi


class NoiseSchedule:
    """Per-step betas for the three branches and derived cumulative terms.

    Index ``t`` runs over ``0..T`` with step 0 the identity (``beta_0 = 0``).

    Parameters
    ----------
    betas : array of length T
        Geometry betas for steps 1..T, each in (0, 1).
    pi_c, pi_e : probability vectors
        Node and edge priors.
    betas_c, betas_e : arrays, optional
        Categorical betas in (0, 1]; default to the geometry betas.
    absorbing : bool
        Replace both priors by a point mass on state 0 (null).
    """

    def __init__(self, betas, pi_c=(0.5, 0.5), pi_e=(0.5, 0.5), betas_c=None, betas_e=None, absorbing=False):
        betas = np.asarray(betas, dtype=np.float64).ravel()
        if betas.size < 1:
            raise ConfigError("schedule needs at least one step")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ConfigError("geometry betas must lie in (0, 1)")
        self.T = int(betas.size)
        self.absorbing = bool(absorbing)
        self.beta = np.concatenate([[0.0], betas])
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)
        self._pi = {}
        self._beta_z = {}
        self._abar_z = {}
        for name, pi, bz in (("c", pi_c, betas_c), ("e", pi_e, betas_e)):
            pi = _as_prior(pi)
            if self.absorbing:
                pi = np.eye(pi.size)[0]
            bz = betas if bz is None else np.asarray(bz, dtype=np.float64).ravel()
            if bz.size != self.T or np.any(bz <= 0) or np.any(bz > 1):
                raise ConfigError(f"branch {name} betas must be T values in (0, 1]")
            self._pi[name] = pi
            self._beta_z[name] = np.concatenate([[0.0], bz])
            self._abar_z[name] = np.cumprod(1.0 - self._beta_z[name])
        self._params = {
            "T": self.T,
            "betas": betas.tolist(),
            "pi_c": list(map(float, np.asarray(pi_c, dtype=float))),
            "pi_e": list(map(float, np.asarray(pi_e, dtype=float))),
            "betas_c": None if betas_c is None else np.asarray(betas_c, dtype=float).tolist(),
            "betas_e": None if betas_e is None else np.asarray(betas_e, dtype=float).tolist(),
            "absorbing": self.absorbing,
        }

    @classmethod
    def linear(cls, T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02, pi_c=(0.5, 0.5), pi_e=(0.5, 0.5),
               absorbing: bool = False) -> "NoiseSchedule":
        if T < 1:
            raise ConfigError("T must be >= 1")
        betas = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_end])
        sched = cls(betas, pi_c, pi_e, absorbing=absorbing)
        sched._params["linear"] = {"beta_start": beta_start, "beta_end": beta_end}
        return sched

    def with_priors(self, pi_c, pi_e) -> "NoiseSchedule":
        d = dict(self._params)
        d["pi_c"], d["pi_e"] = list(pi_c), list(pi_e)
        return NoiseSchedule.from_dict(d)

    def pi(self, branch: str) -> np.ndarray:
        return self._pi[branch]

    def K(self, branch: str) -> int:
        return self._pi[branch].size

    def beta_z(self, branch: str, t: int) -> float:
        return float(self._beta_z[branch][t])

    def alpha_bar_z(self, branch: str, t: int) -> float:
        return float(self._abar_z[branch][t])

    def transition(self, branch: str, t: int) -> np.ndarray:
        """One-step matrix ``Q_t``; rows index the previous state."""
        if not 1 <= t <= self.T:
            raise ValueError(f"t must lie in [1, {self.T}]")
        b = self._beta_z[branch][t]
        pi = self._pi[branch]
        return (1.0 - b) * np.eye(pi.size) + b * np.outer(np.ones(pi.size), pi)

    def geometry_posterior_variance(self, t: int) -> float:
        """``beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t``."""
        return float((1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t])

    def to_dict(self) -> dict:
        return dict(self._params)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        sched = cls(d["betas"], d["pi_c"], d["pi_e"], d.get("betas_c"), d.get("betas_e"), d.get("absorbing", False))
        if "linear" in d:
            sched._params["linear"] = d["linear"]
        return sched

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def cumulative_transition(schedule: NoiseSchedule, branch: str, t: int) -> np.ndarray:
    """Closed-form ``Qbar_t = Q_1 ... Q_t``."""
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t must lie in [0, {schedule.T}]")
    a = schedule.alpha_bar_z(branch, t)
    pi = schedule.pi(branch)
    return a * np.eye(pi.size) + (1.0 - a) * np.outer(np.ones(pi.size), pi)


def one_hot(labels, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return np.eye(K)[labels]


def _check_rows(p: np.ndarray, name: str) -> None:
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > ROW_TOL):
        raise InvalidDistribution(f"{name} rows must be probability vectors")


def forward_geometry(B0, t: int, noise, schedule: NoiseSchedule, active=None) -> np.ndarray:
    """``sqrt(abar_t) b0 + sqrt(1 - abar_t) eps`` on active slots; null slots stay zero."""
    B0 = np.asarray(B0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    a = schedule.alpha_bar[t]
    Bt = np.sqrt(a) * B0 + np.sqrt(1.0 - a) * noise
    if active is not None:
        Bt = np.where(np.asarray(active, dtype=bool)[:, None], Bt, 0.0)
    return Bt


def sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row by inverse CDF."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((u >= cdf).sum(axis=1), probs.shape[1] - 1)


def forward_categorical(z0, branch: str, t: int, schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Sample ``z_t ~ Cat(z0 Qbar_t)``; ``z0`` one-hot rows, result one-hot."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    if t == 0:
        return z0.copy()
    probs = z0 @ cumulative_transition(schedule, branch, t)
    return one_hot(sample_rows(probs, rng), z0.shape[1])


def categorical_posterior(zt, z0, branch: str, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """``q(z_{t-1} | z_t, z0)`` proportional to ``Q_t[:, z_t] * (z0 Qbar_{t-1})``.

    ``z0`` may be a distribution, in which case the same product is formed
    with the distribution in place of the one-hot row.
    """
    zt = np.atleast_2d(np.asarray(zt, dtype=np.float64))
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    if t < 1:
        raise ValueError("posterior needs t >= 1")
    like = zt @ schedule.transition(branch, t).T
    prior = z0 @ cumulative_transition(schedule, branch, t - 1)
    num = like * prior
    norm = num.sum(axis=1, keepdims=True)
    if np.any(norm <= 0) or not np.all(np.isfinite(norm)):
        raise DegenerateRow("posterior normalizer is zero")
    return num / norm


def mixture_posterior(zt, p0, branch: str, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """``sum_k p0[k] q(z_{t-1} | z_t, z0=k)`` for predicted clean-label rows ``p0``."""
    zt = np.atleast_2d(np.asarray(zt, dtype=np.float64))
    p0 = np.atleast_2d(np.asarray(p0, dtype=np.float64))
    K = p0.shape[1]
    out = np.zeros_like(p0)
    for k in range(K):
        w = p0[:, k:k + 1]
        if not np.any(w > 0):
            continue
        z0 = np.zeros_like(p0)
        z0[:, k] = 1.0
        like = zt @ schedule.transition(branch, t).T
        num = like * (z0 @ cumulative_transition(schedule, branch, t - 1))
        norm = num.sum(axis=1, keepdims=True)
        # z0 = k cannot have produced z_t when norm is 0; it carries no mass
        post = np.divide(num, norm, out=np.zeros_like(num), where=norm > 0)
        out += w * post
    total = out.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise DegenerateRow("mixture posterior has no support")
    return out / total


@dataclass(frozen=True)
class LossWeights:
    lambda_b: float = 1.0
    lambda_c: float = 1.0
    lambda_e: float = 1.0
    lambda_x: float = 1.0
    lambda_bd: float = 1.0
    lambda_clean: float = 0.1
    w_max: float = 20.0
    eps: float = 1e-6

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ConfigError(f"{k} must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def loss_geo(eps, eps_hat, node_mask) -> float:
    """Mean over active slots of the squared noise residual norm."""
    mask = np.asarray(node_mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return 0.0
    r = np.asarray(eps, dtype=np.float64)[mask] - np.asarray(eps_hat, dtype=np.float64)[mask]
    return float(np.sum(r * r) / n)


def edge_weights(labels, w_max: float = 20.0, eps: float = 1e-6) -> np.ndarray:
    """1 for null edges, ``min(w_max, N_null / (N_throat + eps))`` for throats."""
    labels = np.asarray(labels)
    n_throat = int(np.count_nonzero(labels))
    n_null = labels.size - n_throat
    w = np.ones(labels.size)
    w[labels != 0] = min(w_max, n_null / (n_throat + eps))
    return w


def loss_categorical(q_true, p_pred, weights=None, reduction: str = "sum") -> float:
    """Weighted KL(q_true || p_pred) summed (or averaged) over rows."""
    q = np.atleast_2d(np.asarray(q_true, dtype=np.float64))
    p = np.atleast_2d(np.asarray(p_pred, dtype=np.float64))
    if q.shape != p.shape:
        raise ValueError("shape mismatch")
    _check_rows(q, "q_true")
    _check_rows(p, "p_pred")
    kl = rel_entr(q, p).sum(axis=1)
    w = np.ones(len(kl)) if weights is None else np.asarray(weights, dtype=np.float64)
    total = float(np.sum(w * kl))
    if reduction == "mean":
        return total / max(len(kl), 1)
    return total


def loss_boundary(B_hat, pC_hat, pE_hat, gb) -> float:
    """Masked squared error on geometry plus cross-entropy on observed labels.

    Each term is averaged over its masked entries; soft edges never enter.
    """
    total = 0.0
    mB = gb.mask_B
    if mB.any():
        r = np.asarray(B_hat)[mB] - gb.values.B[mB]
        total += float(np.sum(r * r) / mB.sum())
    mC = gb.mask_C
    if mC.any():
        p = np.asarray(pC_hat)[mC, gb.values.C[mC]]
        total += float(-np.mean(np.log(np.maximum(p, LOG_FLOOR))))
    mE = gb.mask_E_obs & ~gb.mask_E_soft
    if mE.any():
        p = np.asarray(pE_hat)[mE, gb.values.E[mE]]
        total += float(-np.mean(np.log(np.maximum(p, LOG_FLOOR))))
    return total


def estimate_priors(graphs, K_c: int = 2, K_e: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Add-one smoothed label frequencies over all node slots and candidate pairs."""
    graphs = list(graphs)
    if not graphs:
        raise EmptyInput("no training graphs")
    cc = np.ones(K_c)
    ce = np.ones(K_e)
    for g in graphs:
        cc += np.bincount(g.C.astype(np.int64), minlength=K_c)[:K_c]
        ce += np.bincount(g.E.astype(np.int64), minlength=K_e)[:K_e]
    return cc / cc.sum(), ce / ce.sum()


def sample_terminal(n_max: int, dims, schedule: NoiseSchedule, rng: np.random.Generator) -> PoreGraph:
    """Standard normal geometry and labels drawn from ``pi Qbar_T``."""
    B = rng.standard_normal((n_max, 4))
    pc = schedule.pi("c") @ cumulative_transition(schedule, "c", schedule.T)
    pe = schedule.pi("e") @ cumulative_transition(schedule, "e", schedule.T)
    C = sample_rows(np.broadcast_to(pc, (n_max, pc.size)), rng)
    E = sample_rows(np.broadcast_to(pe, (n_edges(n_max), pe.size)), rng)
    return PoreGraph(n_max, dims, B, C, E)


@dataclass
class NoisyState:
    """A corrupted training state with the noise that produced it."""

    t: int
    state: PoreGraph
    noise: np.ndarray
    active: np.ndarray = field(repr=False)


def corrupt(g0: PoreGraph, t: int, schedule: NoiseSchedule, rng: np.random.Generator) -> NoisyState:
    """Apply all three forward branches to a clean graph at step ``t``."""
    active = g0.C == ACTIVE
    noise = rng.standard_normal(g0.B.shape)
    noise[~active] = 0.0
    Bt = forward_geometry(g0.B, t, noise, schedule, active)
    Ct = forward_categorical(one_hot(g0.C, schedule.K("c")), "c", t, schedule, rng).argmax(axis=1)
    Et = forward_categorical(one_hot(g0.E, schedule.K("e")), "e", t, schedule, rng).argmax(axis=1)
    return NoisyState(t, PoreGraph(g0.n_max, g0.dims, Bt, Ct, Et), noise, active)
