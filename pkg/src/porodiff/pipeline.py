"""End-to-end helpers shared by the command line and the evaluation suite."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .boundary import BoundaryGraph, BoundaryParams, boundary_graph_from_volume
from .decoder import DecoderConfig, decode
from .denoiser import Denoiser
from .diffusion import NoiseSchedule
from .errors import ConfigError
from .flow import permeability
from .metrics import align_curves, cdp, graph_summary, gte, jsd, posterior_diagnostics, psd, tpcf, tpcf_error, tpcf_kl
from .pore_graph import ExtractionConfig, PoreGraph, decompose, extract_pore_graph
from .sampler import SamplerConfig, _streams, masked_entry_count, run_chain, violation_count
from .voxel import VoxelVolume, porosity


def worker_count(requested: int | None = None) -> int:
    """Pool size, capped by ``PORODIFF_THREADS`` when set."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("PORODIFF_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"PORODIFF_THREADS must be an integer, got {cap!r}") from exc
    return max(1, n)


def parallel_map(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]`` on a thread pool; results keep input order."""
    items = list(items)
    n = min(worker_count(workers), max(len(items), 1))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def scaled_schedule(T: int, pi_c=(0.5, 0.5), pi_e=(0.5, 0.5)) -> NoiseSchedule:
    """Linear schedule whose betas scale with ``200 / T`` so short chains still end near noise."""
    scale = 200.0 / T
    return NoiseSchedule.linear(T, min(1e-4 * scale, 0.5), min(0.02 * scale, 0.999), pi_c, pi_e)


def sample_graphs(gb: BoundaryGraph, model: Denoiser, cfg: SamplerConfig, workers: int | None = None) -> list[PoreGraph]:
    """Posterior draws, clamped iff the model uses the boundary prior when ``cfg.clamp`` is set."""
    if model.schedule is None:
        raise ConfigError("model has no noise schedule")
    use_clamp = cfg.clamp and model.flags.use_boundary_prior
    run_cfg = SamplerConfig(cfg.T, cfg.seed, cfg.K, use_clamp, cfg.parameterization)
    streams = _streams(cfg.seed, cfg.K)
    return parallel_map(lambda rng: run_chain(gb, model, model.schedule, run_cfg, rng), streams, workers)


def reconstruct(obs: VoxelVolume, model: Denoiser, n_max: int, sampler: SamplerConfig = SamplerConfig(K=1),
                decoder: DecoderConfig = DecoderConfig(), boundary: BoundaryParams = BoundaryParams(),
                workers: int | None = None):
    """Sample graphs from the two observed faces of ``obs`` and decode each one."""
    gb = boundary_graph_from_volume(obs, n_max, boundary)
    graphs = sample_graphs(gb, model, sampler, workers)
    vols = [decode(g, obs.bottom, obs.top, decoder, obs.dims) for g in graphs]
    return gb, graphs, vols


def volume_graph(v: VoxelVolume, v_min: int = 16, connectivity: int = 6) -> PoreGraph:
    """Pore graph with enough slots for every body."""
    _, regions, _ = decompose(v, v_min, connectivity)
    n_max = max(64, 64 * math.ceil(len(regions) / 64))
    return extract_pore_graph(v, ExtractionConfig(v_min, connectivity, n_max))[0]


def default_lags(v: VoxelVolume) -> np.ndarray:
    return np.arange(0, max(2, v.dims[2] // 2))


def compare_volumes(rec: VoxelVolume, ref: VoxelVolume, lags=None, ref_graph: PoreGraph | None = None,
                    ref_flow=None, c: float = 0.7) -> dict:
    """Morphology, topology and flow metrics of one reconstruction against its reference."""
    lags = default_lags(ref) if lags is None else np.asarray(lags)
    s_ref, s_rec = tpcf(ref, lags), tpcf(rec, lags)
    g_ref = volume_graph(ref) if ref_graph is None else ref_graph
    g_rec = volume_graph(rec)
    psd_a, psd_b = align_curves(psd(rec), psd(ref))
    cdp_a, cdp_b = align_curves(cdp(rec), cdp(ref))
    f_ref = permeability(ref, "z", c) if ref_flow is None else ref_flow
    f_rec = permeability(rec, "z", c)
    summ_rec, summ_ref = graph_summary(g_rec), graph_summary(g_ref)
    return {
        "porosity": porosity(rec),
        "porosity_ref": porosity(ref),
        "tpcf_kl": tpcf_kl(s_ref, s_rec),
        "tpcf_error": tpcf_error(s_ref, s_rec),
        "psd_jsd": _dist_jsd(psd_a, psd_b),
        "cdp_jsd": _dist_jsd(cdp_a, cdp_b),
        "gte": gte(g_rec, g_ref),
        "beta0": summ_rec.beta0,
        "beta1": summ_rec.beta1,
        "boundary_path_ratio": summ_rec.boundary_path_ratio,
        "boundary_path_ratio_ref": summ_ref.boundary_path_ratio,
        "K": f_rec.K,
        "K_ref": f_ref.K,
        "K_rel_error": abs(f_rec.K - f_ref.K) / f_ref.K if f_ref.K > 0 else (0.0 if f_rec.K == 0 else math.inf),
        "disconnected": f_rec.disconnected,
    }


def _dist_jsd(p, q) -> float:
    if p.size == 0 and q.size == 0:
        return 0.0
    if p.sum() == 0 or q.sum() == 0:
        return 1.0
    return jsd(p / p.sum(), q / q.sum())


def evaluate_set(recs, ref: VoxelVolume, graphs=None, gb=None, lags=None) -> dict:
    """Per-reconstruction metrics, their means and posterior diagnostics for two or more draws."""
    lags = default_lags(ref) if lags is None else lags
    g_ref = volume_graph(ref)
    f_ref = permeability(ref, "z")
    rows = [compare_volumes(r, ref, lags, g_ref, f_ref) for r in recs]
    keys = [k for k in rows[0] if isinstance(rows[0][k], (int, float)) and not isinstance(rows[0][k], bool)] if rows else []
    mean = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    if rows:
        mean["disconnected_rate"] = float(np.mean([r["disconnected"] for r in rows]))
    out = {"n": len(rows), "per_sample": rows, "mean": mean}
    if len(recs) >= 2:
        diag = posterior_diagnostics([volume_graph(r) for r in recs], recs, g_ref, ref, lags)
        if graphs is not None and gb is not None:
            total = masked_entry_count(gb)
            diag["violation_rate"] = float(np.mean([violation_count(g, gb) / total if total else 0.0 for g in graphs]))
        out["posterior"] = diag
    return out
