"""Morphology, topology and posterior diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import rel_entr
from scipy.stats import wasserstein_distance

from .errors import EmptyInput, InvalidDistribution, LagOutOfRange, TooFewSamples
from .pore_graph import ACTIVE, THROAT, PoreGraph, decompose, edge_index, equivalent_radius
from .voxel import VoxelVolume, connected_components

BETA_EPS = 1e-6
AXES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}


@dataclass
class DescriptorCurve:
    kind: str
    lags: np.ndarray
    values: np.ndarray
    empty: bool = False

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lags": np.asarray(self.lags).tolist(), "values": np.asarray(self.values).tolist(),
                "empty": self.empty}


# --- two-point correlation ---------------------------------------------------

def tpcf_directional(v: VoxelVolume, lag: int, axis: int = 2) -> float:
    """Exact fraction of pore-pore pairs among all in-volume pairs at ``lag`` along ``axis``."""
    x = v.data.astype(bool)
    n = x.shape[axis]
    if lag < 0 or lag >= n:
        raise LagOutOfRange(f"lag {lag} outside [0, {n}) along axis {axis}")
    if lag == 0:
        return float(x.mean())
    a = np.take(x, np.arange(n - lag), axis=axis)
    b = np.take(x, np.arange(lag, n), axis=axis)
    return float(np.count_nonzero(a & b) / a.size)


def tpcf(v: VoxelVolume, lags, mode: str = "directional", axis="z", rng=None, n_pairs: int = 100_000) -> DescriptorCurve:
    """Two-point correlation ``S2(r) = P(I(x) = 1, I(x + r) = 1)`` of the pore phase.

    Parameters
    ----------
    mode : {"directional", "isotropic"}
        Directional counts every pair along one axis exactly. Isotropic
        draws ``n_pairs`` random point pairs per lag with uniformly random
        directions, rounding the second point to the nearest voxel.
    """
    lags = np.asarray(lags)
    if lags.ndim != 1 or np.any(np.diff(lags) <= 0):
        raise ValueError("lags must be strictly increasing")
    if mode == "directional":
        ax = AXES[axis]
        vals = [tpcf_directional(v, int(r), ax) for r in lags]
        return DescriptorCurve("tpcf", lags.astype(np.float64), np.array(vals))
    if mode != "isotropic":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    dims = np.array(v.dims)
    if np.any(lags < 0) or np.any(lags >= dims.min()):
        raise LagOutOfRange(f"isotropic lags must lie in [0, {dims.min()})")
    x = v.data.astype(bool)
    vals = []
    for r in lags:
        if r == 0:
            vals.append(float(x.mean()))
            continue
        hits = total = 0
        while total < n_pairs:
            k = n_pairs - total
            p = (rng.random((k, 3)) * dims).astype(np.int64)
            d = rng.standard_normal((k, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            q = np.rint(p + r * d).astype(np.int64)
            ok = np.all((q >= 0) & (q < dims), axis=1)
            p, q = p[ok], q[ok]
            hits += int(np.count_nonzero(x[p[:, 0], p[:, 1], p[:, 2]] & x[q[:, 0], q[:, 1], q[:, 2]]))
            total += len(p)
        vals.append(hits / total)
    return DescriptorCurve("tpcf", lags.astype(np.float64), np.array(vals))


def _normalize(values, eps: float = 1e-12) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64) + eps
    return v / v.sum()


def tpcf_kl(reference: DescriptorCurve, estimate: DescriptorCurve, eps: float = 1e-12) -> float:
    """KL divergence between the two curves after normalizing each to unit mass."""
    if not np.array_equal(reference.lags, estimate.lags):
        raise ValueError("curves must share lags")
    return float(np.sum(rel_entr(_normalize(reference.values, eps), _normalize(estimate.values, eps))))


def tpcf_error(reference: DescriptorCurve, estimate: DescriptorCurve) -> float:
    """Relative L1 error ``sum |S2 - S2_ref| / sum S2_ref``."""
    den = float(np.sum(np.abs(reference.values)))
    diff = float(np.sum(np.abs(np.asarray(estimate.values) - reference.values)))
    return diff / den if den > 0 else diff


# --- size distributions ------------------------------------------------------

def psd(v: VoxelVolume, v_min: int = 16, connectivity: int = 6) -> DescriptorCurve:
    """Histogram (1-voxel bins) of pore-body equivalent diameters, as a distribution."""
    _, regions, _ = decompose(v, v_min, connectivity)
    if not regions:
        return DescriptorCurve("psd", np.zeros(0), np.zeros(0), empty=True)
    diam = 2.0 * equivalent_radius(np.array([r.count for r in regions]))
    diam = np.atleast_1d(diam)
    edges = np.arange(0, int(math.floor(diam.max())) + 2)
    hist, _ = np.histogram(diam, bins=edges)
    return DescriptorCurve("psd", edges[:-1].astype(np.float64), hist / hist.sum())


def cdp(v: VoxelVolume, connectivity: int = 6) -> DescriptorCurve:
    """Distribution of connected pore-cluster sizes over the distinct sizes present."""
    labels, count = connected_components(v, 1, connectivity)
    if count == 0:
        return DescriptorCurve("cdp", np.zeros(0), np.zeros(0), empty=True)
    sizes = np.bincount(labels.data.ravel())[1:]
    uniq, freq = np.unique(sizes, return_counts=True)
    return DescriptorCurve("cdp", uniq.astype(np.float64), freq / freq.sum())


def align_curves(a: DescriptorCurve, b: DescriptorCurve) -> tuple[np.ndarray, np.ndarray]:
    """Both distributions on the union of their supports."""
    support = np.union1d(a.lags, b.lags)
    pa = np.zeros(support.size)
    pb = np.zeros(support.size)
    pa[np.searchsorted(support, a.lags)] = a.values
    pb[np.searchsorted(support, b.lags)] = b.values
    return pa, pb


# --- divergences -------------------------------------------------------------

def _check_distribution(p: np.ndarray, name: str) -> None:
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidDistribution(f"{name} is not a probability vector")


def jsd(p, q) -> float:
    """Base-2 Jensen-Shannon divergence, in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    if p.shape != q.shape:
        raise InvalidDistribution("p and q need a shared support")
    m = 0.5 * (p + q)
    val = 0.5 * (np.sum(rel_entr(p, m)) + np.sum(rel_entr(q, m))) / math.log(2.0)
    return float(min(max(val, 0.0), 1.0))


def wasserstein1(a, b) -> float:
    """Exact 1D Wasserstein-1 distance between two empirical distributions."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptyInput("wasserstein1 needs non-empty samples")
    return float(wasserstein_distance(a, b))


# --- graph topology ----------------------------------------------------------

@dataclass
class GraphTopologySummary:
    n_nodes: int
    n_edges: int
    degrees: np.ndarray
    component_sizes: np.ndarray
    beta0: int
    beta1: int
    rho_beta: float
    boundary_path_ratio: float
    coordination_mean: float
    edge_lengths: np.ndarray = field(repr=False)

    def degree_distribution(self, support: int) -> np.ndarray:
        return _histogram(self.degrees, support)

    def component_distribution(self, support: int) -> np.ndarray:
        return _histogram(self.component_sizes, support)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("degrees", "component_sizes", "edge_lengths"):
            d[k] = np.asarray(d[k]).tolist()
        return d


def _histogram(values, support: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    if values.size == 0:
        return np.zeros(support + 1)
    h = np.bincount(values, minlength=support + 1)[: support + 1].astype(np.float64)
    return h / h.sum()


def _components(n: int, edges) -> np.ndarray:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(i) for i in range(n)], dtype=np.int64)


def graph_summary(g: PoreGraph) -> GraphTopologySummary:
    """Degree, component, Betti and boundary statistics of the active subgraph."""
    act = np.flatnonzero(g.C == ACTIVE)
    index = {int(s): k for k, s in enumerate(act)}
    edges = [(index[i], index[j]) for i, j in g.throats() if i in index and j in index]
    n, m = len(act), len(edges)
    deg = np.zeros(n, dtype=np.int64)
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1
    roots = _components(n, edges)
    _, sizes = np.unique(roots, return_counts=True) if n else (None, np.zeros(0, dtype=np.int64))
    beta0 = int(len(sizes))
    beta1 = m - n + beta0
    centers, radii = g.voxel_geometry()
    c, r = centers[act], radii[act]
    top = g.dims[2] - 1
    touch_bottom = c[:, 2] - r <= 0.0
    touch_top = c[:, 2] + r >= top
    bot_roots = set(roots[touch_bottom].tolist())
    top_roots = set(roots[touch_top].tolist())
    ratio = len(bot_roots & top_roots) / len(bot_roots) if bot_roots else 0.0
    lengths = np.array([np.linalg.norm(c[a] - c[b]) for a, b in edges])
    # sorted so the summary never depends on slot order
    return GraphTopologySummary(
        n, m, np.sort(deg), np.sort(sizes), beta0, beta1, beta1 / (n + BETA_EPS), float(ratio),
        float(deg.mean()) if n else 0.0, np.sort(lengths),
    )


def _jsd_or_empty(pa: np.ndarray, pb: np.ndarray, ea: bool, eb: bool) -> float:
    if ea and eb:
        return 0.0
    if ea or eb:
        return 1.0
    return jsd(pa, pb)


def gte(g_hat: PoreGraph, g: PoreGraph) -> float:
    """Graph topology error ``(JSD_deg + JSD_cc + d_beta) / 3``."""
    a, b = graph_summary(g_hat), graph_summary(g)
    dmax = int(max(a.degrees.max(initial=0), b.degrees.max(initial=0)))
    cmax = int(max(a.component_sizes.max(initial=0), b.component_sizes.max(initial=0)))
    j_deg = _jsd_or_empty(a.degree_distribution(dmax), b.degree_distribution(dmax), a.n_nodes == 0, b.n_nodes == 0)
    j_cc = _jsd_or_empty(a.component_distribution(cmax), b.component_distribution(cmax), a.n_nodes == 0, b.n_nodes == 0)
    d_beta = abs(a.rho_beta - b.rho_beta) / (a.rho_beta + b.rho_beta + BETA_EPS)
    return (j_deg + j_cc + d_beta) / 3.0


def betti_error(g_hat: PoreGraph, g: PoreGraph) -> dict:
    """Symmetric relative errors of beta0 and beta1."""
    a, b = graph_summary(g_hat), graph_summary(g)
    return {
        "beta0": abs(a.beta0 - b.beta0) / (a.beta0 + b.beta0 + BETA_EPS),
        "beta1": abs(a.beta1 - b.beta1) / (a.beta1 + b.beta1 + BETA_EPS),
    }


def euler_characteristic(v: VoxelVolume) -> int:
    """``V - E + F - C`` of the cubical complex formed by closed pore voxels."""
    x = np.pad(v.data.astype(bool), 1)
    cells = int(np.count_nonzero(x))

    def present(offsets):
        # a lattice cell exists if any voxel in the given offset set is pore
        H, W, L = x.shape
        acc = np.zeros((H - 1, W - 1, L - 1), dtype=bool)
        for dx, dy, dz in offsets:
            acc |= x[dx:H - 1 + dx, dy:W - 1 + dy, dz:L - 1 + dz]
        return int(np.count_nonzero(acc))

    corners = [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]
    verts = present(corners)
    edges = faces = 0
    for axis in range(3):
        # edges along ``axis`` are shared by the 4 voxels varying in the other two axes
        e_off = [o for o in corners if o[axis] == 1]
        f_off = [o for o in corners if all(o[k] == 1 for k in range(3) if k != axis)]
        edges += present(e_off)
        faces += present(f_off)
    return verts - edges + faces - cells


# --- posterior diagnostics ---------------------------------------------------

def nearest_rank(values, pct: float) -> float:
    s = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(pct / 100.0 * len(s)))
    return float(s[rank - 1])


def posterior_diagnostics(sample_graphs, sample_volumes, ref_graph: PoreGraph, ref_volume: VoxelVolume,
                          lags=None, gb=None) -> dict:
    """Diversity, 5-95% coverage, boundary violation rate and GTE spread."""
    from .sampler import masked_entry_count, violation_count

    K = len(sample_graphs)
    if K < 2:
        raise TooFewSamples("posterior diagnostics need at least two samples")
    if lags is None:
        lags = np.arange(0, min(ref_volume.dims[2], 16))
    curves = np.array([tpcf(v, lags).values for v in sample_volumes])
    ref = tpcf(ref_volume, lags).values
    pair = [np.abs(curves[i] - curves[j]).sum() for i in range(K) for j in range(i + 1, K)]
    lo = np.array([nearest_rank(curves[:, k], 5) for k in range(len(lags))])
    hi = np.array([nearest_rank(curves[:, k], 95) for k in range(len(lags))])
    coverage = float(np.mean((ref >= lo) & (ref <= hi)))
    if gb is not None:
        total = masked_entry_count(gb)
        viol = float(np.mean([violation_count(g, gb) / total if total else 0.0 for g in sample_graphs]))
    else:
        viol = None
    gtes = [gte(g, ref_graph) for g in sample_graphs]
    return {
        "K": K,
        "diversity": float(np.mean(pair)),
        "coverage": coverage,
        "violation_rate": viol,
        "gte_best": float(min(gtes)),
        "gte_mean": float(np.mean(gtes)),
        "gte_worst": float(max(gtes)),
    }


def permutation_robustness(g: PoreGraph, trials: int = 10, seed: int = 0, obs: VoxelVolume | None = None,
                           decoder_cfg=None) -> dict:
    """Decode and graph metrics under random slot permutations versus the original."""
    from .decoder import DecoderConfig, decode, soft_occupancy

    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = DecoderConfig() if decoder_cfg is None else decoder_cfg
    rng = np.random.default_rng(seed)
    base_field = soft_occupancy(g, None, cfg)
    base_vol = decode(g, obs.bottom, obs.top, cfg, obs.dims) if obs is not None else None
    base_sum = graph_summary(g)
    rows = []
    for k in range(trials):
        perm = rng.permutation(g.n_max)
        h = g.permuted(perm)
        field_ = soft_occupancy(h, None, cfg)
        s = graph_summary(h)
        row = {
            "trial": k,
            "field_max_abs_delta": float(np.max(np.abs(field_ - base_field))) if field_.size else 0.0,
            "field_bit_identical": bool(np.array_equal(field_, base_field)),
            "gte_delta": gte(h, g),
            "beta0_delta": abs(s.beta0 - base_sum.beta0),
            "beta1_delta": abs(s.beta1 - base_sum.beta1),
            "boundary_path_delta": abs(s.boundary_path_ratio - base_sum.boundary_path_ratio),
            "coordination_delta": abs(s.coordination_mean - base_sum.coordination_mean),
            "edge_length_w1": wasserstein1(s.edge_lengths, base_sum.edge_lengths) if s.n_edges else 0.0,
        }
        if base_vol is not None:
            row["volume_bit_identical"] = decode(h, obs.bottom, obs.top, cfg, obs.dims) == base_vol
        rows.append(row)
    maxima = {k: max(float(r[k]) for r in rows) for k in rows[0] if k.endswith("delta") or k.endswith("w1")}
    return {"rows": rows, "max": maxima}
