"""Training targets and the denoiser training loop.

The clean target for a crop places the observed boundary nodes in the
leading slots (exactly as in the boundary graph) and the extracted 3D pore
bodies after them. Each boundary node is linked to the bodies whose region
contains its pixels, so the target graph joins the two faces through the
interior.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .boundary import BoundaryGraph, BoundaryParams, boundary_graph_from_volume, extract_boundary_components, segment_slice
from .decoder import BCE_CLIP, DecoderConfig, log_complement, trilinear_weights
from .denoiser import Denoiser
from .diffusion import (
    LossWeights,
    NoiseSchedule,
    categorical_posterior,
    corrupt,
    cumulative_transition,
    edge_weights,
    one_hot,
)
from .errors import ConfigError, EmptyInput, NonFiniteLoss, Overflow
from .pore_graph import ACTIVE, THROAT, ExtractionConfig, PoreGraph, coord_scale, edge_index, extract_pore_graph, pair_lookup
from .sampler import clamp
from .voxel import VoxelVolume

LOG_EPS = 1e-12


@dataclass
class TrainingExample:
    volume: VoxelVolume
    target: PoreGraph
    gb: BoundaryGraph


def aligned_target(v: VoxelVolume, gb: BoundaryGraph, cfg: ExtractionConfig = ExtractionConfig()) -> PoreGraph:
    """Clean graph sharing the boundary slots of ``gb`` followed by 3D bodies."""
    n_max = gb.n_max
    nb = gb.n_observed
    room = n_max - nb
    if room < 0:
        raise Overflow("boundary graph fills more than n_max slots")
    target = gb.values.copy()
    # soft edges are evidence only, never target throats
    target.E[gb.mask_E_soft] = 0
    if room == 0:
        return target
    body_cfg = ExtractionConfig(cfg.v_min, cfg.connectivity, 64 * math.ceil(room / 64))
    bodies, labels = extract_pore_graph(v, body_cfg)
    keep = min(bodies.n_active, room)
    lookup = pair_lookup(n_max)
    for s in range(keep):
        target.B[nb + s] = bodies.B[s]
        target.C[nb + s] = bodies.C[s]
    for i, j in bodies.throats():
        if i < keep and j < keep:
            target.E[lookup[nb + i, nb + j]] = THROAT
    # boundary node -> bodies whose region overlaps its pixels
    params = BoundaryParams(**{k: v for k, v in gb.params.items() if k in BoundaryParams.__dataclass_fields__})
    lab = labels.data
    for side_id, z in ((0, 0), (1, v.dims[2] - 1)):
        mask = segment_slice(v.data[:, :, z], params.tau_seg)
        comps = extract_boundary_components(mask, "bottom" if side_id == 0 else "top", params.window_pad)
        slots = np.flatnonzero(gb.side == side_id)
        if slots.size == 0:
            continue
        scale = coord_scale(v.dims)
        for c in comps:
            row = np.array([c.centroid[0], c.centroid[1], float(side_id) * scale[2], c.radius]) / scale
            slot = int(slots[np.argmin(np.abs(gb.values.B[slots] - row).sum(axis=1))])
            hit = np.unique(lab[c.pixels[:, 0], c.pixels[:, 1], z])
            for body in hit[(hit > 0) & (hit <= keep)]:
                target.E[lookup[slot, nb + int(body) - 1]] = THROAT
    return target


def build_example(v: VoxelVolume, n_max: int, extraction: ExtractionConfig = ExtractionConfig(),
                  boundary: BoundaryParams = BoundaryParams()) -> TrainingExample:
    gb = boundary_graph_from_volume(v, n_max, boundary)
    return TrainingExample(v, aligned_target(v, gb, extraction), gb)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    clip_norm: float = 1.0
    seed: int = 0
    n_vox: int = 2048
    throat_confidence: float = 0.5
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decoder"] = self.decoder.to_dict()
        return d


def _branch_posteriors(zt, z0, branch, t, schedule):
    """Target posterior rows and the per-z0 posterior stack used by the model mixture."""
    K = schedule.K(branch)
    zt1 = one_hot(zt, K)
    q = categorical_posterior(zt1, one_hot(z0, K), branch, t, schedule)
    Qt = schedule.transition(branch, t)
    Qb = cumulative_transition(schedule, branch, t - 1)
    like = zt1 @ Qt.T  # (n, K)
    stack = like[:, None, :] * Qb[None, :, :]  # (n, k0, K)
    norm = stack.sum(axis=2, keepdims=True)
    stack = np.divide(stack, norm, out=np.zeros_like(stack), where=norm > 0)
    return q, stack


def _kl_mixture(p_hat: ad.Tensor, q: np.ndarray, stack: np.ndarray) -> ad.Tensor:
    """Rows of KL(q || sum_k p_hat[k] stack[k]); constant term ``sum q log q`` included."""
    n, K = q.shape
    mix = ad.reduce_sum(ad.expand(ad.reshape(p_hat, (n, K, 1)), (n, K, K)) * ad.Tensor(stack), axis=1)
    mix = mix / ad.expand(ad.reduce_sum(mix, axis=1, keepdims=True), (n, K))
    ent = np.sum(np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0), axis=1)
    return ad.Tensor(ent) - ad.reduce_sum(ad.Tensor(q) * ad.log(mix + LOG_EPS), axis=1)


def _masked_mean(x: ad.Tensor, mask: np.ndarray) -> ad.Tensor:
    k = int(np.count_nonzero(mask))
    if k == 0:
        return ad.Tensor(0.0)
    return ad.reduce_sum(x * ad.Tensor(mask.astype(np.float64))) / float(k)


def _soft_field_at(points, B0: ad.Tensor, p_active: ad.Tensor, p_throat: ad.Tensor, pairs, dims, dec: DecoderConfig):
    """Differentiable decoded pore probability at voxel ``points`` (n_pts, 3)."""
    scale = np.array([max(d - 1, 1) for d in dims] + [max(dims)], dtype=np.float64)
    n = B0.shape[0]
    P = len(points)
    vox = B0 * ad.Tensor(np.broadcast_to(scale, (n, 4)).copy())
    centers = vox[:, :3]
    radii = vox[:, 3]
    u = ad.Tensor(np.broadcast_to(points[:, None, :], (P, n, 3)).copy())
    diff = u - ad.expand(ad.reshape(centers, (1, n, 3)), (P, n, 3))
    dist = ad.sqrt(ad.reduce_sum(ad.square(diff), axis=2) + 1e-12)
    arg = (ad.expand(ad.reshape(radii, (1, n)), (P, n)) - dist) / dec.w
    o = ad.expand(ad.reshape(p_active, (1, n)), (P, n)) * ad.sigmoid(arg)
    logc = ad.reduce_sum(ad.log1p(-ad.clip(o, 0.0, 1.0 - LOG_EPS)), axis=1)
    if len(pairs):
        i, j, k = (np.array(x, dtype=np.int64) for x in zip(*pairs))
        m = len(i)
        a = ad.take(centers, i)
        b = ad.take(centers, j)
        ab = b - a
        den = ad.reduce_sum(ad.square(ab), axis=1) + 1e-12
        U = ad.Tensor(np.broadcast_to(points[:, None, :], (P, m, 3)).copy())
        au = U - ad.expand(ad.reshape(a, (1, m, 3)), (P, m, 3))
        abx = ad.expand(ad.reshape(ab, (1, m, 3)), (P, m, 3))
        s = ad.clip(ad.reduce_sum(au * abx, axis=2) / ad.expand(ad.reshape(den, (1, m)), (P, m)), 0.0, 1.0)
        off = au - ad.expand(ad.reshape(s, (P, m, 1)), (P, m, 3)) * abx
        d = ad.sqrt(ad.reduce_sum(ad.square(off), axis=2) + 1e-12)
        ri, rj = ad.take(radii, i), ad.take(radii, j)
        smaller = (ri.data <= rj.data).astype(np.float64)
        rmin = ri * ad.Tensor(smaller) + rj * ad.Tensor(1.0 - smaller)
        arg = (ad.expand(ad.reshape(rmin * dec.c, (1, m)), (P, m)) - d) / dec.w
        o = ad.expand(ad.reshape(ad.take(p_throat, k), (1, m)), (P, m)) * ad.sigmoid(arg)
        logc = logc + ad.reduce_sum(ad.log1p(-ad.clip(o, 0.0, 1.0 - LOG_EPS)), axis=1)
    return -ad.expm1(logc)


def _bce(p: ad.Tensor, x: np.ndarray) -> ad.Tensor:
    p = ad.clip(p, BCE_CLIP, 1.0 - BCE_CLIP)
    x = ad.Tensor(np.asarray(x, dtype=np.float64))
    return -ad.mean(x * ad.log(p) + (1.0 - x) * ad.log1p(-p))


def _residual_logit(p: ad.Tensor, W: np.ndarray, grid: ad.Tensor) -> ad.Tensor:
    p = ad.clip(p, BCE_CLIP, 1.0 - BCE_CLIP)
    logit = ad.log(p) - ad.log1p(-p)
    off = ad.reshape(ad.matmul(ad.Tensor(W), ad.reshape(grid, (-1, 1))), (-1,))
    return ad.sigmoid(logit + off)


def loss_terms(model: Denoiser, ex: TrainingExample, t: int, schedule: NoiseSchedule, weights: LossWeights,
               rng: np.random.Generator, cfg: TrainConfig = TrainConfig()) -> dict:
    """All weighted loss components for one example at step ``t``."""
    flags = model.flags
    g0 = ex.target
    gb = ex.gb
    noisy = corrupt(g0, t, schedule, rng)
    St = clamp(noisy.state, gb) if flags.use_boundary_prior else noisy.state
    out = model.forward(St, gb, t)
    ab = schedule.alpha_bar[t]
    terms = {}
    clamped = gb.mask_B if flags.use_boundary_prior else np.zeros(g0.n_max, dtype=bool)
    geo_mask = noisy.active & ~clamped
    if weights.lambda_b:
        r = ad.reduce_sum(ad.square(out.eps - ad.Tensor(noisy.noise)), axis=1)
        terms["geo"] = _masked_mean(r, geo_mask)
    categorical = flags.use_discrete_topology
    if categorical and weights.lambda_c:
        q, stack = _branch_posteriors(St.C, g0.C, "c", t, schedule)
        terms["node"] = ad.mean(_kl_mixture(out.p_c, q, stack))
    if categorical and weights.lambda_e:
        q, stack = _branch_posteriors(St.E, g0.E, "e", t, schedule)
        w = edge_weights(g0.E, weights.w_max, weights.eps)
        terms["edge"] = ad.reduce_sum(_kl_mixture(out.p_e, q, stack) * ad.Tensor(w)) / float(len(w))
    B0_hat = (ad.Tensor(St.B) - out.eps * math.sqrt(1.0 - ab)) / math.sqrt(ab)
    if weights.lambda_bd and flags.use_boundary_prior:
        bd = ad.Tensor(0.0)
        if gb.mask_B.any():
            r = ad.reduce_sum(ad.square(B0_hat - ad.Tensor(gb.values.B)), axis=1)
            bd = bd + _masked_mean(r, gb.mask_B)
        if categorical and gb.mask_C.any():
            sel = one_hot(gb.values.C, schedule.K("c"))
            ce = -ad.log(ad.reduce_sum(out.p_c * ad.Tensor(sel), axis=1) + LOG_EPS)
            bd = bd + _masked_mean(ce, gb.mask_C)
        mE = gb.mask_E_obs & ~gb.mask_E_soft
        if categorical and mE.any():
            sel = one_hot(gb.values.E, schedule.K("e"))
            ce = -ad.log(ad.reduce_sum(out.p_e * ad.Tensor(sel), axis=1) + LOG_EPS)
            bd = bd + _masked_mean(ce, mE)
        terms["bd"] = bd
    if weights.lambda_x:
        dims = g0.dims
        flat = rng.choice(int(np.prod(dims)), size=min(cfg.n_vox, int(np.prod(dims))), replace=False)
        pts = np.column_stack(np.unravel_index(flat, dims, order="F")).astype(np.float64)
        x = ex.volume.data[pts[:, 0].astype(int), pts[:, 1].astype(int), pts[:, 2].astype(int)]
        p_active = out.p_c[:, ACTIVE]
        p_throat = out.p_e[:, THROAT]
        conf = (p_throat.data > cfg.throat_confidence) | (g0.E == THROAT)
        iu, ju = edge_index(g0.n_max)
        pairs = [(int(iu[k]), int(ju[k]), int(k)) for k in np.flatnonzero(conf)]
        field_ = _soft_field_at(pts, B0_hat, p_active, p_throat, pairs, dims, cfg.decoder)
        clean = -np.expm1(log_complement(g0, dims, cfg.decoder, pts))
        clean_t = ad.Tensor(clean)
        if cfg.decoder.residual:
            W = trilinear_weights(pts, cfg.decoder.residual_shape, dims)
            grid = model.params["dec.residual"]
            field_ = _residual_logit(field_, W, grid)
            clean_t = _residual_logit(clean_t, W, grid)
        vol = _bce(field_, x)
        if weights.lambda_clean:
            vol = vol + _bce(clean_t, x) * weights.lambda_clean
        terms["vol"] = vol
    lam = {"geo": weights.lambda_b, "node": weights.lambda_c, "edge": weights.lambda_e,
           "bd": weights.lambda_bd, "vol": weights.lambda_x}
    total = ad.Tensor(0.0)
    for k, v in terms.items():
        total = total + v * lam[k]
    terms["total"] = total
    return terms


@dataclass
class TrainResult:
    model: Denoiser
    trace: list  # per epoch: dict of mean loss components
    steps: int = 0


def train(dataset, model: Denoiser, schedule: NoiseSchedule, weights: LossWeights = LossWeights(),
          cfg: TrainConfig = TrainConfig(), log=None) -> TrainResult:
    """Adam on single-example steps with ``t`` uniform in ``[1, T]``."""
    dataset = list(dataset)
    if not dataset:
        raise EmptyInput("training set is empty")
    if cfg.epochs < 0:
        raise ConfigError("epochs must be non-negative")
    rng = np.random.default_rng(cfg.seed)
    opt = ad.Adam(model.params, lr=cfg.lr, clip_norm=cfg.clip_norm)
    any_weight = any((weights.lambda_b, weights.lambda_c, weights.lambda_e, weights.lambda_x, weights.lambda_bd))
    trace, steps = [], 0
    for epoch in range(cfg.epochs):
        acc: dict[str, float] = {}
        for idx in rng.permutation(len(dataset)):
            t = int(rng.integers(1, schedule.T + 1))
            terms = loss_terms(model, dataset[idx], t, schedule, weights, rng, cfg)
            values = {k: v.item() for k, v in terms.items()}
            if not all(math.isfinite(x) for x in values.values()):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, example {idx}, t={t}",
                    {"epoch": epoch, "example": int(idx), "t": t, "terms": values, "params_finite": model.params.all_finite()},
                )
            if any_weight:
                opt.zero_grad()
                terms["total"].backward()
                opt.step()
            steps += 1
            for k, x in values.items():
                acc[k] = acc.get(k, 0.0) + x
        row = {k: v / len(dataset) for k, v in acc.items()}
        row["epoch"] = epoch
        trace.append(row)
        if log is not None:
            log(row)
    return TrainResult(model, trace, steps)


def trace_csv(trace) -> str:
    keys = ["epoch", "total", "geo", "node", "edge", "bd", "vol"]
    lines = [",".join(keys)]
    for row in trace:
        lines.append(",".join(repr(float(row.get(k, 0.0))) if k != "epoch" else str(row["epoch"]) for k in keys))
    return "\n".join(lines) + "\n"
