"""Boundary-clamped reverse sampling of the mixed graph state."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np

from .boundary import BoundaryGraph
from .diffusion import NoiseSchedule, mixture_posterior, one_hot, sample_rows, sample_terminal
from .errors import ConfigError
from .pore_graph import ACTIVE, NULL, PoreGraph

PARAMETERIZATIONS = ("x0", "direct")


@dataclass(frozen=True)
class SamplerConfig:
    T: int | None = None  # defaults to the schedule length
    seed: int = 0
    K: int = 16
    clamp: bool = True
    parameterization: str = "x0"

    def __post_init__(self):
        if self.T is not None and self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigError(f"parameterization must be one of {PARAMETERIZATIONS}")

    def to_dict(self) -> dict:
        return asdict(self)


def clamp(S: PoreGraph, gb: BoundaryGraph) -> PoreGraph:
    """Overwrite hard-observed geometry, node labels and edge labels with ``G_B``.

    Soft consistency edges are left alone.
    """
    out = S.copy()
    mB, mC = gb.mask_B, gb.mask_C
    mE = gb.mask_E_obs & ~gb.mask_E_soft
    out.B[mB] = gb.values.B[mB]
    out.C[mC] = gb.values.C[mC]
    out.E[mE] = gb.values.E[mE]
    return out


def reverse_geometry(Bt, eps_hat, t: int, schedule: NoiseSchedule, noise=None) -> np.ndarray:
    """DDPM mean from the noise estimate plus ``sqrt(beta_tilde)`` noise (none at t = 1)."""
    a, ab = schedule.alpha[t], schedule.alpha_bar[t]
    mean = (Bt - schedule.beta[t] / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(a)
    if t == 1 or noise is None:
        return mean
    return mean + math.sqrt(schedule.geometry_posterior_variance(t)) * noise


def reverse_labels(z_t, p_hat, branch: str, t: int, schedule: NoiseSchedule, rng, parameterization: str = "x0"):
    K = schedule.K(branch)
    if parameterization == "direct":
        probs = np.asarray(p_hat, dtype=np.float64)
    else:
        # at t = 1 each component is a point mass on its z0, so this reduces to p_hat
        probs = mixture_posterior(one_hot(z_t, K), p_hat, branch, t, schedule)
    return sample_rows(probs, rng)


def reverse_step(S_t: PoreGraph, t: int, outputs, schedule: NoiseSchedule, rng: np.random.Generator,
                 parameterization: str = "x0") -> PoreGraph:
    """One ancestral step ``S_t -> S_{t-1}`` given ``(eps_hat, p_C, p_E)``."""
    eps_hat, p_c, p_e = outputs
    noise = rng.standard_normal(S_t.B.shape) if t > 1 else None
    B = reverse_geometry(S_t.B, eps_hat, t, schedule, noise)
    C = reverse_labels(S_t.C, p_c, "c", t, schedule, rng, parameterization)
    E = reverse_labels(S_t.E, p_e, "e", t, schedule, rng, parameterization)
    # null slots carry the zero geometry vector, as in the forward process
    B[C == NULL] = 0.0
    return PoreGraph(S_t.n_max, S_t.dims, B, C, E)


def _streams(seed: int, K: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(K)]


def run_chain(gb: BoundaryGraph, model, schedule: NoiseSchedule, cfg: SamplerConfig, rng) -> PoreGraph:
    T = schedule.T if cfg.T is None else cfg.T
    if T != schedule.T:
        raise ConfigError(f"sampler T={T} does not match schedule T={schedule.T}")
    S = sample_terminal(gb.n_max, gb.dims, schedule, rng)
    if cfg.clamp:
        S = clamp(S, gb)
    for t in range(T, 0, -1):
        out = model(S, gb, t)
        S = reverse_step(S, t, out, schedule, rng, cfg.parameterization)
        if cfg.clamp:
            S = clamp(S, gb)
    S = project_valid(S)
    return clamp(S, gb) if cfg.clamp else S


def project_valid(S: PoreGraph) -> PoreGraph:
    """Map a final draw onto a valid graph state.

    Active nodes without a positive radius become null; active coordinates
    are clipped into the unit cube. Null geometry and dangling throats are
    then cleared.
    """
    out = S.copy()
    act = out.C == ACTIVE
    out.C[act & (out.B[:, 3] <= 0)] = NULL
    act = out.C == ACTIVE
    out.B[act, :3] = np.clip(out.B[act, :3], 0.0, 1.0)
    return out.sanitized()


def sample(gb: BoundaryGraph, model, schedule: NoiseSchedule, cfg: SamplerConfig = SamplerConfig()) -> PoreGraph:
    """One posterior draw; identical to the first draw of :func:`sample_posterior`."""
    return run_chain(gb, model, schedule, cfg, _streams(cfg.seed, 1)[0])


def sample_posterior(gb: BoundaryGraph, model, schedule: NoiseSchedule, cfg: SamplerConfig = SamplerConfig()) -> list[PoreGraph]:
    """``K`` independent draws, each on its own stream split from ``cfg.seed``."""
    return [run_chain(gb, model, schedule, cfg, rng) for rng in _streams(cfg.seed, cfg.K)]


def violation_count(S: PoreGraph, gb: BoundaryGraph) -> int:
    """Number of hard-masked entries of ``S`` that differ from ``G_B``."""
    mE = gb.mask_E_obs & ~gb.mask_E_soft
    return int(
        np.count_nonzero(S.B[gb.mask_B] != gb.values.B[gb.mask_B])
        + np.count_nonzero(S.C[gb.mask_C] != gb.values.C[gb.mask_C])
        + np.count_nonzero(S.E[mE] != gb.values.E[mE])
    )


def masked_entry_count(gb: BoundaryGraph) -> int:
    mE = gb.mask_E_obs & ~gb.mask_E_soft
    return int(4 * gb.mask_B.sum() + gb.mask_C.sum() + mE.sum())


class OracleDenoiser:
    """Returns the exact noise of a known clean state and point-mass labels.

    Given ``S_t`` it reports ``eps = (B_t - sqrt(abar) B_0) / sqrt(1 - abar)``,
    which is the noise that maps ``B_0`` to ``B_t``; label heads are one-hot
    at the clean labels.
    """

    def __init__(self, S0: PoreGraph, schedule: NoiseSchedule):
        self.S0 = S0
        self.schedule = schedule
        self.pc = one_hot(S0.C, schedule.K("c"))
        self.pe = one_hot(S0.E, schedule.K("e"))

    def __call__(self, state: PoreGraph, gb, t: int):
        ab = self.schedule.alpha_bar[t]
        eps = (state.B - math.sqrt(ab) * self.S0.B) / math.sqrt(1.0 - ab)
        return eps, self.pc, self.pe


def sample_manifest(cfg: SamplerConfig, schedule: NoiseSchedule, flags=None) -> dict:
    return {
        "seed": cfg.seed,
        "K": cfg.K,
        "sampler": cfg.to_dict(),
        "flags": None if flags is None else flags.to_dict(),
        "schedule_hash": schedule.hash(),
    }


def graph_digest(g: PoreGraph) -> str:
    h = hashlib.sha256()
    h.update(g.B.astype("<f8").tobytes())
    h.update(g.C.astype("i1").tobytes())
    h.update(g.E.astype("i1").tobytes())
    return h.hexdigest()[:16]
