"""Pore-graph state S = (B, C, E) and its extraction from binary volumes.

Geometry ``B`` holds one row ``(x, y, z, r)`` per slot: coordinates are
voxel coordinates divided by ``dim - 1`` (so the two boundary slices sit at
z = 0 and z = 1) and radii are divided by the largest crop side. ``C`` holds
node states (0 null, 1 active) and ``E`` holds edge states (0 null,
1 throat) over the upper-triangular pair list ``i < j``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import ConfigError, EmptyInput
from .voxel import LabelVolume, VoxelVolume, edt, remove_small_components

NULL, ACTIVE = 0, 1
NO_THROAT, THROAT = 0, 1


@lru_cache(maxsize=32)
def edge_index(n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of every candidate pair ``(i, j)``, ``i < j``, row-major."""
    iu, ju = np.triu_indices(n_max, 1)
    iu.flags.writeable = False
    ju.flags.writeable = False
    return iu, ju


@lru_cache(maxsize=32)
def pair_lookup(n_max: int) -> np.ndarray:
    """``n_max x n_max`` table of edge indices; -1 on the diagonal."""
    iu, ju = edge_index(n_max)
    table = np.full((n_max, n_max), -1, dtype=np.int64)
    k = np.arange(iu.size)
    table[iu, ju] = k
    table[ju, iu] = k
    table.flags.writeable = False
    return table


def n_edges(n_max: int) -> int:
    return n_max * (n_max - 1) // 2


def coord_scale(dims) -> np.ndarray:
    """Voxel units per normalized unit for (x, y, z, r)."""
    dims = [int(d) for d in dims]
    return np.array([max(d - 1, 1) for d in dims] + [max(dims)], dtype=np.float64)


@dataclass(eq=False)
class PoreGraph:
    n_max: int
    dims: tuple
    B: np.ndarray = None
    C: np.ndarray = None
    E: np.ndarray = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        n = self.n_max
        self.B = np.zeros((n, 4)) if self.B is None else np.array(self.B, dtype=np.float64).reshape(n, 4)
        self.C = np.zeros(n, dtype=np.int8) if self.C is None else np.array(self.C, dtype=np.int8).reshape(n)
        m = n_edges(n)
        self.E = np.zeros(m, dtype=np.int8) if self.E is None else np.array(self.E, dtype=np.int8).reshape(m)

    @classmethod
    def empty(cls, n_max: int, dims) -> "PoreGraph":
        return cls(n_max, dims)

    def copy(self) -> "PoreGraph":
        return PoreGraph(self.n_max, self.dims, self.B.copy(), self.C.copy(), self.E.copy())

    def __eq__(self, other):
        if not isinstance(other, PoreGraph):
            return NotImplemented
        return (
            self.n_max == other.n_max
            and self.dims == other.dims
            and np.array_equal(self.B, other.B)
            and np.array_equal(self.C, other.C)
            and np.array_equal(self.E, other.E)
        )

    @property
    def active(self) -> np.ndarray:
        return self.C == ACTIVE

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))

    def throats(self) -> list[tuple[int, int]]:
        iu, ju = edge_index(self.n_max)
        k = np.flatnonzero(self.E == THROAT)
        return list(zip(iu[k].tolist(), ju[k].tolist()))

    def adjacency(self) -> np.ndarray:
        iu, ju = edge_index(self.n_max)
        a = np.zeros((self.n_max, self.n_max), dtype=bool)
        k = self.E == THROAT
        a[iu[k], ju[k]] = True
        a[ju[k], iu[k]] = True
        return a

    def voxel_geometry(self) -> tuple[np.ndarray, np.ndarray]:
        """Centroids (n_max x 3) and radii (n_max) in voxel units.

        Values are rounded to 1e-9 voxel so a normalize/de-normalize round
        trip returns lattice values exactly.
        """
        g = np.round(self.B * coord_scale(self.dims), 9)
        return g[:, :3], g[:, 3]

    def sanitized(self) -> "PoreGraph":
        """Zero null-node geometry and drop edges that touch null nodes."""
        g = self.copy()
        g.B[~g.active] = 0.0
        iu, ju = edge_index(g.n_max)
        g.E[~(g.active[iu] & g.active[ju])] = NO_THROAT
        return g

    def check(self) -> None:
        """Raise ``ValueError`` if a structural invariant is violated."""
        act = self.active
        if np.any(self.B[~act] != 0):
            raise ValueError("null nodes must carry zero geometry")
        iu, ju = edge_index(self.n_max)
        if np.any((self.E == THROAT) & ~(act[iu] & act[ju])):
            raise ValueError("throat incident to a null node")
        if np.any(self.B[act, 3] <= 0):
            raise ValueError("active nodes need a positive radius")
        if np.any((self.B[act, :3] < 0) | (self.B[act, :3] > 1)):
            raise ValueError("active coordinates must lie in [0, 1]")

    def permuted(self, perm) -> "PoreGraph":
        """Slot ``k`` of the result holds slot ``perm[k]`` of ``self``."""
        perm = np.asarray(perm, dtype=np.int64)
        iu, ju = edge_index(self.n_max)
        lookup = pair_lookup(self.n_max)
        E = self.E[lookup[perm[iu], perm[ju]]]
        return PoreGraph(self.n_max, self.dims, self.B[perm], self.C[perm], E)

    def to_dict(self) -> dict:
        nodes = [
            {"slot": i, "state": int(self.C[i]), "x": float(b[0]), "y": float(b[1]), "z": float(b[2]), "r": float(b[3])}
            for i, b in enumerate(self.B)
        ]
        iu, ju = edge_index(self.n_max)
        k = np.flatnonzero(self.E != NO_THROAT)
        edges = [{"i": int(iu[e]), "j": int(ju[e]), "state": int(self.E[e])} for e in k]
        return {"n_max": self.n_max, "dims": list(self.dims), "nodes": nodes, "edges": edges}

    @classmethod
    def from_dict(cls, d: dict) -> "PoreGraph":
        n = int(d["n_max"])
        g = cls(n, d["dims"])
        for node in d["nodes"]:
            s = int(node["slot"])
            g.C[s] = int(node["state"])
            g.B[s] = [node["x"], node["y"], node["z"], node["r"]]
        lookup = pair_lookup(n)
        for e in d["edges"]:
            g.E[lookup[int(e["i"]), int(e["j"])]] = int(e["state"])
        return g

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PoreGraph":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ExtractionConfig:
    v_min: int = 16
    connectivity: int = 6
    n_max: int = 128

    def __post_init__(self):
        if self.v_min < 1:
            raise ConfigError("v_min must be >= 1")
        if self.connectivity not in (6, 26):
            raise ConfigError("connectivity must be 6 or 26")
        if self.n_max < 64 or self.n_max % 64:
            raise ConfigError("n_max must be a positive multiple of 64")


class PoreRegion(NamedTuple):
    label: int
    count: int
    centroid: tuple  # voxel coordinates (x, y, z)


def equivalent_radius(voxel_count) -> float:
    """Radius of the sphere with the given voxel volume."""
    if np.any(np.asarray(voxel_count) < 1):
        raise ValueError("voxel count must be >= 1")
    return np.cbrt(3.0 * np.asarray(voxel_count, dtype=np.float64) / (4.0 * math.pi))[()]


def region_adjacency(labels: np.ndarray) -> set[tuple[int, int]]:
    """Label pairs ``(a, b)``, ``a < b``, with 6-adjacent voxels."""
    pairs = set()
    for axis in range(3):
        n = labels.shape[axis]
        a = np.take(labels, np.arange(n - 1), axis=axis).ravel()
        b = np.take(labels, np.arange(1, n), axis=axis).ravel()
        sel = (a != b) & (a > 0) & (b > 0)
        if not sel.any():
            continue
        lo = np.minimum(a[sel], b[sel]).astype(np.int64)
        hi = np.maximum(a[sel], b[sel]).astype(np.int64)
        for p in np.unique(lo * (int(labels.max()) + 1) + hi).tolist():
            pairs.add(divmod(p, int(labels.max()) + 1))
    return pairs


def decompose(v: VoxelVolume, v_min: int = 16, connectivity: int = 6):
    """Watershed pore bodies of a volume.

    Returns ``(labels [x, y, z], regions, throats)`` with regions numbered
    by seed order and throats as label pairs.
    """
    kept = remove_small_components(v, v_min, connectivity)
    dist = edt(kept, 1)
    lab_zyx, count = _kernels.watershed(np.ascontiguousarray(kept.zyx), np.ascontiguousarray(dist.data.T), connectivity)
    labels = lab_zyx.T
    regions = []
    if count:
        flat = labels.ravel(order="F")
        counts = np.bincount(flat, minlength=count + 1)
        gx, gy, gz = np.meshgrid(*[np.arange(n) for n in v.dims], indexing="ij")
        sums = [np.bincount(flat, weights=g.ravel(order="F"), minlength=count + 1) for g in (gx, gy, gz)]
        for k in range(1, count + 1):
            c = int(counts[k])
            regions.append(PoreRegion(k, c, (sums[0][k] / c, sums[1][k] / c, sums[2][k] / c)))
    return labels, regions, region_adjacency(labels)


def _normalized_row(region: PoreRegion, scale: np.ndarray) -> np.ndarray:
    return np.array([*region.centroid, equivalent_radius(region.count)]) / scale


def _canonical_keys(B: np.ndarray, tiebreak: np.ndarray) -> np.ndarray:
    """Sort order by (z, y, x, r, tiebreak)."""
    return np.lexsort((tiebreak, B[:, 3], B[:, 0], B[:, 1], B[:, 2]))


def _place(regions, n_max: int, dims, throats):
    scale = coord_scale(dims)
    regions = list(regions)
    rows = np.array([_normalized_row(r, scale) for r in regions]).reshape(-1, 4)
    labels = np.array([r.label for r in regions], dtype=np.int64)
    if len(regions) > n_max:
        canon_rank = np.empty(len(regions), dtype=np.int64)
        canon_rank[_canonical_keys(rows, labels)] = np.arange(len(regions))
        counts = np.array([r.count for r in regions])
        keep = np.lexsort((canon_rank, -counts))[:n_max]
        rows, labels = rows[keep], labels[keep]
    order = _canonical_keys(rows, labels)
    rows, labels = rows[order], labels[order]
    g = PoreGraph(n_max, dims)
    m = len(labels)
    g.B[:m] = rows
    g.C[:m] = ACTIVE
    slot_of = {int(lab): s for s, lab in enumerate(labels.tolist())}
    lookup = pair_lookup(n_max)
    for a, b in throats:
        if a in slot_of and b in slot_of:
            g.E[lookup[slot_of[a], slot_of[b]]] = THROAT
    return g, slot_of


def pad_truncate(regions, n_max: int, dims, throats=()) -> PoreGraph:
    """Place regions into ``n_max`` canonical slots, keeping the largest."""
    return _place(regions, n_max, dims, throats)[0]


def extract_pore_graph(v: VoxelVolume, cfg: ExtractionConfig = ExtractionConfig()) -> tuple[PoreGraph, LabelVolume]:
    labels, regions, throats = decompose(v, cfg.v_min, cfg.connectivity)
    g, slot_of = _place(regions, cfg.n_max, v.dims, throats)
    # retained bodies are relabelled by slot, dropped ones follow in seed order
    remap = np.zeros(len(regions) + 1, dtype=np.int32)
    nxt = len(slot_of)
    for r in regions:
        if r.label in slot_of:
            remap[r.label] = slot_of[r.label] + 1
        else:
            nxt += 1
            remap[r.label] = nxt
    return g, LabelVolume(remap[labels], len(regions))


def canonical_order(g: PoreGraph) -> PoreGraph:
    """Active slots sorted by (z, y, x, r), null slots last; idempotent."""
    act = np.flatnonzero(g.active)
    null = np.flatnonzero(~g.active)
    order = act[_canonical_keys(g.B[act], act)]
    return g.permuted(np.concatenate([order, null]))


def select_nmax(active_counts) -> int:
    """Nearest-rank 99th percentile rounded up to a multiple of 64."""
    counts = sorted(int(c) for c in active_counts)
    if not counts:
        raise EmptyInput("active_counts is empty")
    rank = math.ceil(0.99 * len(counts))
    p99 = counts[max(rank, 1) - 1]
    return max(64, 64 * math.ceil(p99 / 64))
