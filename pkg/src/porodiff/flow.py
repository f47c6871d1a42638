"""Pore-network permeability from a pore graph.

Throats carry Hagen-Poiseuille conductance ``g = pi r_t^4 / (8 mu l)`` with
``r_t = c min(r_i, r_j)``. Two reservoir nodes sit on the inlet and outlet
faces of the chosen axis; the pressure system on interior nodes is solved by
Jacobi-preconditioned conjugate gradients and ``K`` follows from Darcy's law.
Units are voxels throughout, so ``K`` is in voxel^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import cg

from .errors import Disconnected, EmptyInput, NoConvergence
from .metrics import AXES
from .pore_graph import ACTIVE, ExtractionConfig, PoreGraph, decompose, extract_pore_graph
from .voxel import VoxelVolume

CONDUCTANCE_MODEL = "poiseuille-min-radius"
MIN_LENGTH = 0.5  # a node can sit no closer than half a voxel to a face


def conductance(r_t, length, mu: float = 1.0):
    return math.pi * np.asarray(r_t, dtype=np.float64) ** 4 / (8.0 * mu * np.asarray(length, dtype=np.float64))


@dataclass
class FlowNetwork:
    """Interior nodes ``0..n-1`` plus the inlet ``n`` and outlet ``n + 1``.

    Attributes
    ----------
    edges : (m, 2) int array
        Throat endpoints, interior or reservoir indices.
    g : (m,) float array
        Throat conductances, all positive.
    """

    n: int
    edges: np.ndarray
    g: np.ndarray
    axis: int
    length: float
    area: float
    mu: float = 1.0

    @property
    def inlet(self) -> int:
        return self.n

    @property
    def outlet(self) -> int:
        return self.n + 1

    def adjacency(self) -> sparse.csr_matrix:
        N = self.n + 2
        i, j = self.edges[:, 0], self.edges[:, 1]
        A = sparse.coo_matrix((np.r_[self.g, self.g], (np.r_[i, j], np.r_[j, i])), shape=(N, N))
        return A.tocsr()

    def connected(self) -> bool:
        if len(self.edges) == 0:
            return False
        _, lab = csgraph.connected_components(self.adjacency(), directed=False)
        return bool(lab[self.inlet] == lab[self.outlet])

    def swapped(self) -> "FlowNetwork":
        """The same network with inlet and outlet exchanged."""
        e = self.edges.copy()
        a, b = e == self.inlet, e == self.outlet
        e[a], e[b] = self.outlet, self.inlet
        return FlowNetwork(self.n, e, self.g.copy(), self.axis, self.length, self.area, self.mu)

    def scaled(self, factor: float) -> "FlowNetwork":
        return FlowNetwork(self.n, self.edges.copy(), self.g * factor, self.axis, self.length, self.area, self.mu)


def build_network(g: PoreGraph, axis="z", c: float = 0.7, mu: float = 1.0, face_slots=None) -> FlowNetwork:
    """Interior nodes from active pores, reservoirs on the two faces normal to ``axis``.

    A node attaches to a reservoir when its sphere reaches the face plane,
    ``|coordinate - face| <= r``, with faces at ``-0.5`` and ``L - 0.5``.
    The reservoir link has length ``max(|coordinate - face|, 0.5)`` and
    radius ``c r``.

    Parameters
    ----------
    face_slots : pair of sets, optional
        Slots whose voxels lie on the inlet and outlet faces. These attach
        as well, which matters for elongated bodies whose equivalent sphere
        falls short of the face.
    """
    ax = AXES[axis]
    act = np.flatnonzero(g.C == ACTIVE)
    index = np.full(g.n_max, -1, dtype=np.int64)
    index[act] = np.arange(len(act))
    centers, radii = g.voxel_geometry()
    n = len(act)
    L = g.dims[ax]
    area = float(np.prod([d for k, d in enumerate(g.dims) if k != ax]))
    edges, cond = [], []
    for i, j in g.throats():
        a, b = index[i], index[j]
        if a < 0 or b < 0:
            continue
        length = max(float(np.linalg.norm(centers[i] - centers[j])), MIN_LENGTH)
        edges.append((a, b))
        cond.append(float(conductance(c * min(radii[i], radii[j]), length, mu)))
    faces = (-0.5, L - 0.5)
    for k, s in enumerate(act):
        for res, face in ((n, faces[0]), (n + 1, faces[1])):
            dist = abs(centers[s, ax] - face)
            touches = face_slots is not None and int(s) in face_slots[res - n]
            if dist <= radii[s] or touches:
                edges.append((k, res))
                cond.append(float(conductance(c * radii[s], max(dist, MIN_LENGTH), mu)))
    E = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return FlowNetwork(n, E, np.array(cond, dtype=np.float64), ax, float(L), area, mu)


@dataclass
class PressureSolution:
    pressure: np.ndarray  # interior pressures; NaN for nodes not on an inlet-outlet cluster
    Q: float
    iterations: int
    residual: float
    outlet_flux: float

    def node_net_flux(self, net: FlowNetwork, dP: float) -> np.ndarray:
        """Net outflow at each interior node (zero at a converged solve, NaN off the solved cluster)."""
        p = np.r_[self.pressure, dP, 0.0]
        i, j = net.edges[:, 0], net.edges[:, 1]
        f = net.g * (p[i] - p[j])
        out = np.zeros(net.n + 2)
        np.add.at(out, i, f)
        np.add.at(out, j, -f)
        return out[: net.n]


def solve_pressure(net: FlowNetwork, dP: float = 1.0, tol: float = 1e-10, maxiter: int | None = None) -> PressureSolution:
    """Interior pressures with the inlet held at ``dP`` and the outlet at 0."""
    if not net.connected():
        raise Disconnected("no path between inlet and outlet reservoirs")
    A = net.adjacency()
    _, lab = csgraph.connected_components(A, directed=False)
    keep = np.flatnonzero(lab[: net.n] == lab[net.inlet])
    N = net.n + 2
    Lap = (sparse.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()
    Lii = Lap[keep][:, keep]
    # Dirichlet values move to the right-hand side
    b = -(Lap[keep][:, [net.inlet]] * dP).toarray().ravel()
    diag = Lii.diagonal()
    M = sparse.diags(1.0 / diag)
    count = [0]

    def tick(_):
        count[0] += 1

    limit = maxiter if maxiter is not None else max(10 * len(keep), 100)
    x, info = cg(Lii, b, rtol=tol, atol=0.0, maxiter=limit, M=M, callback=tick)
    res = float(np.linalg.norm(b - Lii @ x) / np.linalg.norm(b)) if np.any(b) else 0.0
    if info != 0 or res > tol:
        raise NoConvergence(f"CG stopped after {count[0]} iterations at relative residual {res:.3e}")
    p = np.full(net.n, np.nan)
    p[keep] = x
    full = np.zeros(N)
    full[keep] = x
    full[net.inlet] = dP
    i, j = net.edges[:, 0], net.edges[:, 1]
    f = net.g * (full[i] - full[j])
    Q = float(np.sum(f[j == net.inlet] * -1) + np.sum(f[i == net.inlet]))
    Qout = float(np.sum(f[j == net.outlet]) - np.sum(f[i == net.outlet]))
    return PressureSolution(p, Q, count[0], res, Qout)


@dataclass
class FlowReport:
    axis: str
    K: float
    Q: float
    disconnected: bool
    iterations: int
    residual: float
    conductance_model: str = CONDUCTANCE_MODEL

    def to_dict(self) -> dict:
        return dict(self.__dict__)


AXIS_NAMES = "xyz"


def permeability(source, axis="z", c: float = 0.7, mu: float = 1.0, dP: float = 1.0, tol: float = 1e-10,
                 extraction: ExtractionConfig | None = None, area: float | None = None,
                 length: float | None = None) -> FlowReport:
    """Darcy permeability ``K = Q mu L / (A dP)``; zero for a disconnected network.

    ``source`` is a :class:`FlowNetwork`, a :class:`PoreGraph` or a volume
    (which is extracted first with ``extraction``).
    """
    if isinstance(source, VoxelVolume):
        source, faces = _volume_graph(source, extraction, AXES[axis])
        net = build_network(source, axis, c, mu, faces)
    elif isinstance(source, FlowNetwork):
        net = source
    else:
        net = build_network(source, axis, c, mu)
    A = net.area if area is None else area
    Lz = net.length if length is None else length
    name = AXIS_NAMES[net.axis]
    if not net.connected():
        return FlowReport(name, 0.0, 0.0, True, 0, 0.0)
    sol = solve_pressure(net, dP, tol)
    K = sol.Q * net.mu * Lz / (A * dP)
    return FlowReport(name, float(K), sol.Q, False, sol.iterations, sol.residual)


def _volume_graph(v: VoxelVolume, cfg: ExtractionConfig | None, ax: int):
    if cfg is None:
        # every pore keeps a slot, so nothing is truncated before the solve
        _, regions, _ = decompose(v)
        cfg = ExtractionConfig(n_max=max(64, -(-len(regions) // 64) * 64))
    g, labels = extract_pore_graph(v, cfg)
    n_act = g.n_active
    faces = []
    for idx in (0, v.dims[ax] - 1):
        lab = np.unique(np.take(labels.data, idx, axis=ax))
        faces.append({int(k) - 1 for k in lab if 0 < k <= n_act})
    return g, faces


def disconnection_rate(items, axis="z", c: float = 0.7) -> float:
    """Fraction of volumes, graphs or networks without an inlet-outlet path."""
    items = list(items)
    if not items:
        raise EmptyInput("disconnection_rate needs at least one item")
    flags = []
    for it in items:
        if isinstance(it, FlowNetwork):
            flags.append(not it.connected())
        else:
            flags.append(permeability(it, axis, c).disconnected)
    return float(np.mean(flags))
