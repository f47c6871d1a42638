"""Partial boundary graph built from the two observed slices.

Each slice is segmented, split into 4-connected pore components, and every
component becomes one observed node lifted to z = 0 (bottom) or z = 1
(top). Same-slice neighbours become observed edges; top-bottom matches
become soft consistency edges that condition the denoiser but are never
clamped.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import Overflow
from .pore_graph import ACTIVE, THROAT, PoreGraph, coord_scale, edge_index, pair_lookup
from .voxel import VoxelVolume, connected_components

BOTTOM, TOP = "bottom", "top"
TPCF_LAGS = (1, 2, 4, 8)
DESCRIPTOR_SIZE = 5 + len(TPCF_LAGS)


@dataclass(frozen=True)
class BoundaryParams:
    tau_seg: float = 0.5
    sigma_p: float = 4.0
    sigma_r: float = 2.0
    sigma_xi: float = 1.0
    tau_bt: float = 0.5
    k: int = 3
    window_pad: int = 8
    standardize: bool = True

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class BoundaryComponent:
    side: str
    centroid: tuple  # in-plane (x, y) voxel coordinates
    radius: float
    descriptor: np.ndarray
    pixels: np.ndarray = field(repr=False)  # (n, 2) int array of (x, y)

    @property
    def area(self) -> int:
        return len(self.pixels)


def segment_slice(slice_2d, tau_seg: float = 0.5) -> np.ndarray:
    """Binary pore mask ``value > tau_seg``."""
    return (np.asarray(slice_2d, dtype=np.float64) > tau_seg).astype(np.uint8)


def _slice_tpcf(window: np.ndarray, lag: int) -> float:
    vals = []
    for axis in (0, 1):
        n = window.shape[axis]
        if lag >= n:
            continue
        a = np.take(window, np.arange(n - lag), axis=axis)
        b = np.take(window, np.arange(lag, n), axis=axis)
        vals.append(float(np.mean(a & b)))
    return float(np.mean(vals)) if vals else 0.0


def _perimeter(comp: np.ndarray) -> int:
    padded = np.pad(comp, 1)
    return int(
        np.count_nonzero(padded[1:, :] != padded[:-1, :]) + np.count_nonzero(padded[:, 1:] != padded[:, :-1])
    )


def component_descriptor(mask: np.ndarray, comp: np.ndarray, pixels: np.ndarray, window_pad: int) -> np.ndarray:
    """Nine local morphology features of one component.

    Area fraction of the window, perimeter, second central moments
    (mu20, mu02, mu11 per pixel) and window two-point correlation at lags
    1, 2, 4, 8.
    """
    lo = np.maximum(pixels.min(axis=0) - window_pad, 0)
    hi = np.minimum(pixels.max(axis=0) + window_pad + 1, mask.shape)
    window = mask[lo[0]:hi[0], lo[1]:hi[1]].astype(bool)
    xy = pixels.astype(np.float64)
    d = xy - xy.mean(axis=0)
    mu20 = float(np.mean(d[:, 0] ** 2))
    mu02 = float(np.mean(d[:, 1] ** 2))
    mu11 = float(np.mean(d[:, 0] * d[:, 1]))
    feats = [float(window.mean()), float(_perimeter(comp)), mu20, mu02, mu11]
    feats += [_slice_tpcf(window, lag) for lag in TPCF_LAGS]
    return np.array(feats)


def extract_boundary_components(mask, side: str, window_pad: int = 8) -> list[BoundaryComponent]:
    """4-connected pore components of a binary slice, in raster order."""
    mask = np.asarray(mask, dtype=np.uint8)
    labels, count = connected_components(VoxelVolume(mask[:, :, None]), 1, 6)
    lab2d = labels.data[:, :, 0]
    out = []
    for k in range(1, count + 1):
        comp = lab2d == k
        # pixels listed x-fastest to match the raster convention
        pixels = np.argwhere(comp.T)[:, ::-1]
        area = len(pixels)
        centroid = tuple(float(c) for c in pixels.mean(axis=0))
        out.append(
            BoundaryComponent(
                side,
                centroid,
                math.sqrt(area / math.pi),
                component_descriptor(mask, comp, pixels, window_pad),
                pixels,
            )
        )
    return out


def consistency_score(a: BoundaryComponent, b: BoundaryComponent, sigma_p: float, sigma_r: float, sigma_xi: float,
                      xi_a=None, xi_b=None) -> float:
    """Gaussian agreement of in-plane position, radius and descriptor."""
    dp = np.subtract(a.centroid[:2], b.centroid[:2])
    xa = a.descriptor if xi_a is None else xi_a
    xb = b.descriptor if xi_b is None else xi_b
    expo = (
        float(dp @ dp) / (2 * sigma_p**2)
        + (a.radius - b.radius) ** 2 / (2 * sigma_r**2)
        + float(np.sum((np.asarray(xa) - np.asarray(xb)) ** 2)) / (2 * sigma_xi**2)
    )
    return math.exp(-expo)


def standardized_descriptors(components) -> np.ndarray:
    """Z-score each descriptor dimension over the given components."""
    if not components:
        return np.zeros((0, DESCRIPTOR_SIZE))
    xi = np.array([c.descriptor for c in components])
    std = xi.std(axis=0)
    std[std == 0] = 1.0
    return (xi - xi.mean(axis=0)) / std


def score_matrix(bottoms, tops, params: BoundaryParams = BoundaryParams()) -> np.ndarray:
    if params.standardize:
        xi = standardized_descriptors(list(bottoms) + list(tops))
        xb, xt = xi[: len(bottoms)], xi[len(bottoms):]
    else:
        xb = [b.descriptor for b in bottoms]
        xt = [t.descriptor for t in tops]
    rho = np.zeros((len(bottoms), len(tops)))
    for i, a in enumerate(bottoms):
        for j, b in enumerate(tops):
            rho[i, j] = consistency_score(a, b, params.sigma_p, params.sigma_r, params.sigma_xi, xb[i], xt[j])
    return rho


def _knn(scores: np.ndarray, k: int) -> list[set]:
    # stable descending sort: equal scores keep index order
    return [set(np.argsort(-row, kind="stable")[:k].tolist()) for row in scores]


def match_top_bottom(bottoms, tops, params: BoundaryParams = BoundaryParams()) -> list[tuple[int, int, float]]:
    """Mutual k-nearest (by score) bottom-top pairs with score above ``tau_bt``."""
    if params.k < 1:
        raise ValueError("k must be >= 1")
    if not bottoms or not tops:
        return []
    rho = score_matrix(bottoms, tops, params)
    top_nn = _knn(rho, params.k)
    bot_nn = _knn(rho.T, params.k)
    out = []
    for a in range(len(bottoms)):
        for b in sorted(top_nn[a]):
            if a in bot_nn[b] and rho[a, b] > params.tau_bt:
                out.append((a, b, float(rho[a, b])))
    return out


def _touching_pairs(components, shape) -> list[tuple[int, int]]:
    # components whose masks dilated by one pixel overlap
    struct = np.ones((3, 3), dtype=bool)
    dilated = []
    for c in components:
        m = np.zeros(shape, dtype=bool)
        m[c.pixels[:, 0], c.pixels[:, 1]] = True
        dilated.append(ndimage.binary_dilation(m, structure=struct))
    pairs = []
    for i in range(len(components)):
        for j in range(i + 1, len(components)):
            if np.any(dilated[i] & dilated[j]):
                pairs.append((i, j))
    return pairs


@dataclass(eq=False)
class BoundaryGraph:
    values: PoreGraph
    mask_B: np.ndarray
    mask_C: np.ndarray
    mask_E_obs: np.ndarray
    mask_E_soft: np.ndarray
    soft_weight: np.ndarray
    side: np.ndarray  # per slot: -1 unobserved, 0 bottom, 1 top
    params: dict = field(default_factory=dict)

    @property
    def n_max(self) -> int:
        return self.values.n_max

    @property
    def dims(self):
        return self.values.dims

    @property
    def n_observed(self) -> int:
        return int(np.count_nonzero(self.mask_C))

    def check(self) -> None:
        if np.any(self.mask_E_obs & self.mask_E_soft):
            raise ValueError("observed and soft edge masks overlap")
        iu, ju = edge_index(self.n_max)
        obs = self.mask_E_obs
        if np.any(obs & (self.side[iu] != self.side[ju])):
            raise ValueError("observed edge joins different slices")

    def to_dict(self) -> dict:
        d = self.values.to_dict()
        iu, ju = edge_index(self.n_max)
        d["mask_B"] = self.mask_B.astype(int).tolist()
        d["mask_C"] = self.mask_C.astype(int).tolist()
        d["mask_E_obs"] = [[int(iu[k]), int(ju[k])] for k in np.flatnonzero(self.mask_E_obs)]
        d["mask_E_soft"] = [
            [int(iu[k]), int(ju[k]), float(self.soft_weight[k])] for k in np.flatnonzero(self.mask_E_soft)
        ]
        d["side"] = self.side.astype(int).tolist()
        d["params"] = dict(self.params)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryGraph":
        values = PoreGraph.from_dict(d)
        n = values.n_max
        lookup = pair_lookup(n)
        m = values.E.size
        obs = np.zeros(m, dtype=bool)
        soft = np.zeros(m, dtype=bool)
        weight = np.zeros(m)
        for i, j in d["mask_E_obs"]:
            obs[lookup[i, j]] = True
        for i, j, w in d["mask_E_soft"]:
            soft[lookup[i, j]] = True
            weight[lookup[i, j]] = w
        return cls(
            values,
            np.array(d["mask_B"], dtype=bool),
            np.array(d["mask_C"], dtype=bool),
            obs,
            soft,
            weight,
            np.array(d["side"], dtype=np.int8),
            dict(d.get("params", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BoundaryGraph":
        return cls.from_dict(json.loads(text))

    @classmethod
    def empty(cls, n_max: int, dims, params=None) -> "BoundaryGraph":
        m = n_max * (n_max - 1) // 2
        return cls(
            PoreGraph(n_max, dims),
            np.zeros(n_max, dtype=bool),
            np.zeros(n_max, dtype=bool),
            np.zeros(m, dtype=bool),
            np.zeros(m, dtype=bool),
            np.zeros(m),
            np.full(n_max, -1, dtype=np.int8),
            dict(params or {}),
        )


def build_boundary_graph(bottoms, tops, soft_edges, n_max: int, dims, params: BoundaryParams = BoundaryParams()) -> BoundaryGraph:
    """Place boundary components in the leading slots and set the four masks."""
    bottoms, tops = list(bottoms), list(tops)
    if len(bottoms) + len(tops) > n_max:
        raise Overflow(f"{len(bottoms) + len(tops)} boundary components exceed n_max={n_max}")
    dims = tuple(int(d) for d in dims)
    scale = coord_scale(dims)
    gb = BoundaryGraph.empty(n_max, dims, params.to_dict())

    def rows(comps, z):
        return np.array([[c.centroid[0], c.centroid[1], 0.0, c.radius] for c in comps]).reshape(-1, 4) / scale + [0, 0, z, 0]

    slot_of = {}
    slot = 0
    for side_id, comps, z in ((0, bottoms, 0.0), (1, tops, 1.0)):
        r = rows(comps, z)
        order = np.lexsort((np.arange(len(comps)), r[:, 3], r[:, 0], r[:, 1]))
        for idx in order.tolist():
            gb.values.B[slot] = r[idx]
            gb.values.C[slot] = ACTIVE
            gb.side[slot] = side_id
            slot_of[(side_id, idx)] = slot
            slot += 1
    gb.mask_B[:slot] = True
    gb.mask_C[:slot] = True

    lookup = pair_lookup(n_max)
    shape = dims[:2]
    for side_id, comps in ((0, bottoms), (1, tops)):
        for a, b in _touching_pairs(comps, shape):
            k = lookup[slot_of[(side_id, a)], slot_of[(side_id, b)]]
            gb.mask_E_obs[k] = True
            gb.values.E[k] = THROAT
    for a, b, rho in soft_edges:
        k = lookup[slot_of[(0, a)], slot_of[(1, b)]]
        gb.mask_E_soft[k] = True
        gb.soft_weight[k] = rho
        gb.values.E[k] = THROAT
    return gb


def boundary_graph_from_slices(bottom, top, n_max: int, depth: int, params: BoundaryParams = BoundaryParams()) -> BoundaryGraph:
    """Segment both slices, extract components, match them and build G_B."""
    mb = segment_slice(bottom, params.tau_seg)
    mt = segment_slice(top, params.tau_seg)
    bottoms = extract_boundary_components(mb, BOTTOM, params.window_pad)
    tops = extract_boundary_components(mt, TOP, params.window_pad)
    soft = match_top_bottom(bottoms, tops, params)
    dims = (mb.shape[0], mb.shape[1], depth)
    return build_boundary_graph(bottoms, tops, soft, n_max, dims, params)


def boundary_graph_from_volume(v: VoxelVolume, n_max: int, params: BoundaryParams = BoundaryParams()) -> BoundaryGraph:
    return boundary_graph_from_slices(v.bottom, v.top, n_max, v.dims[2], params)
