"""Analytic graph-to-volume decoder and exact boundary projection.

Every active node contributes a logistic sphere kernel and every throat a
logistic capsule around the segment between its endpoints. Kernels are
combined by the probabilistic union ``1 - prod(1 - o_k)``, accumulated in
log space over a canonical kernel order so that the field depends only on
the set of kernels, never on slot order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimMismatch
from .pore_graph import ACTIVE, PoreGraph, coord_scale
from .voxel import VoxelVolume

BCE_CLIP = 1e-7


@dataclass(frozen=True)
class DecoderConfig:
    w: float = 1.0
    c: float = 0.7
    theta: float = 0.5
    residual: bool = False
    residual_shape: tuple = (4, 4, 4)

    def __post_init__(self):
        if self.w <= 0:
            raise ConfigError("w must be positive")
        if not 0 < self.c <= 1:
            raise ConfigError("c must lie in (0, 1]")
        if not 0 < self.theta < 1:
            raise ConfigError("theta must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _grid(dims):
    gx, gy, gz = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def _segment_distance(u: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    den = float(ab @ ab)
    if den == 0:
        return np.linalg.norm(u - a, axis=-1)
    s = np.clip(((u - a) @ ab) / den, 0.0, 1.0)
    return np.linalg.norm(u - a - s[..., None] * ab, axis=-1)


def kernels(g: PoreGraph, c: float = 0.7) -> tuple[list, list]:
    """Voxel-space sphere ``(x, y, z, r)`` and capsule ``(a, b, radius)`` kernels in canonical order."""
    centers, radii = g.voxel_geometry()
    active = g.C == ACTIVE
    spheres = sorted(
        (float(centers[i, 0]), float(centers[i, 1]), float(centers[i, 2]), float(radii[i]))
        for i in np.flatnonzero(active)
    )
    capsules = []
    for i, j in g.throats():
        if not (active[i] and active[j]):
            continue
        a, b = tuple(map(float, centers[i])), tuple(map(float, centers[j]))
        a, b = min(a, b), max(a, b)
        capsules.append((a, b, c * min(float(radii[i]), float(radii[j]))))
    capsules.sort()
    return spheres, capsules


def log_complement(g: PoreGraph, dims, cfg: DecoderConfig = DecoderConfig(), points=None) -> np.ndarray:
    """``sum_k log(1 - o_k)`` per voxel (or per row of ``points``)."""
    u = _grid(dims) if points is None else np.asarray(points, dtype=np.float64)
    acc = np.zeros(u.shape[:-1])
    spheres, capsules = kernels(g, cfg.c)
    for x, y, z, r in spheres:
        d = np.linalg.norm(u - np.array([x, y, z]), axis=-1)
        acc -= np.logaddexp(0.0, (r - d) / cfg.w)
    for a, b, rad in capsules:
        d = _segment_distance(u, np.array(a), np.array(b))
        acc -= np.logaddexp(0.0, (rad - d) / cfg.w)
    return acc


def soft_occupancy(g: PoreGraph, dims=None, cfg: DecoderConfig = DecoderConfig(), residual=None) -> np.ndarray:
    """Pore probability per voxel, indexed ``[x, y, z]``."""
    dims = tuple(g.dims if dims is None else dims)
    s = log_complement(g, dims, cfg)
    field = -np.expm1(s)
    if residual is not None:
        field = apply_residual(field, residual)
    return field


def binarize(field: np.ndarray, theta: float = 0.5) -> VoxelVolume:
    return VoxelVolume((np.asarray(field) >= theta).astype(np.uint8))


def residual_offsets(grid: np.ndarray, dims) -> np.ndarray:
    """Trilinear upsampling of a coarse logit-offset grid to ``dims``."""
    grid = np.asarray(grid, dtype=np.float64)
    coords = [np.linspace(0, s - 1, d) for s, d in zip(grid.shape, dims)]
    mesh = np.meshgrid(*coords, indexing="ij")
    return ndimage.map_coordinates(grid, mesh, order=1, mode="nearest")


def trilinear_weights(points: np.ndarray, grid_shape, dims) -> np.ndarray:
    """Dense ``(n_points, grid_size)`` matrix reproducing :func:`residual_offsets` at ``points``."""
    points = np.asarray(points, dtype=np.float64)
    gs = np.array(grid_shape)
    scale = (gs - 1) / np.maximum(np.array(dims) - 1, 1)
    q = points * scale
    lo = np.clip(np.floor(q).astype(int), 0, gs - 1)
    hi = np.minimum(lo + 1, gs - 1)
    f = q - lo
    W = np.zeros((len(points), int(np.prod(gs))))
    rows = np.arange(len(points))
    for corner in range(8):
        bits = [(corner >> k) & 1 for k in range(3)]
        idx = [np.where(bits[k], hi[:, k], lo[:, k]) for k in range(3)]
        w = np.prod([np.where(bits[k], f[:, k], 1 - f[:, k]) for k in range(3)], axis=0)
        np.add.at(W, (rows, np.ravel_multi_index(idx, tuple(gs))), w)
    return W


def apply_residual(field: np.ndarray, grid: np.ndarray) -> np.ndarray:
    p = np.clip(field, BCE_CLIP, 1 - BCE_CLIP)
    logit = np.log(p) - np.log1p(-p)
    return 1.0 / (1.0 + np.exp(-(logit + residual_offsets(grid, field.shape))))


def bce(p, x) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_CLIP, 1 - BCE_CLIP)
    x = np.asarray(x, dtype=np.float64)
    return float(-np.mean(x * np.log(p) + (1 - x) * np.log1p(-p)))


def loss_vol(field, X, clean_field=None, lambda_clean: float = 0.1) -> float:
    """BCE of the decoded field against ``X`` plus ``lambda_clean`` times the clean-graph BCE."""
    x = X.data if isinstance(X, VoxelVolume) else X
    total = bce(field, x)
    if clean_field is not None and lambda_clean:
        total += lambda_clean * bce(clean_field, x)
    return total


def boundary_projection(X_hat: VoxelVolume, bottom, top) -> VoxelVolume:
    """Overwrite slices z = 0 and z = L - 1 with the observations."""
    bottom = np.asarray(bottom, dtype=np.uint8)
    top = np.asarray(top, dtype=np.uint8)
    H, W, _ = X_hat.dims
    if bottom.shape != (H, W) or top.shape != (H, W):
        raise DimMismatch(f"slices {bottom.shape}/{top.shape} do not match in-plane dims {(H, W)}")
    data = np.array(X_hat.data, order="F")
    data[:, :, 0] = bottom
    data[:, :, -1] = top
    return VoxelVolume(data)


def decode(g: PoreGraph, bottom, top, cfg: DecoderConfig = DecoderConfig(), dims=None, residual=None) -> VoxelVolume:
    """Soft field, threshold at ``theta``, then project the observed slices."""
    field = soft_occupancy(g, dims, cfg, residual if cfg.residual else None)
    return boundary_projection(binarize(field, cfg.theta), bottom, top)


def decode_observed(g: PoreGraph, obs: VoxelVolume, cfg: DecoderConfig = DecoderConfig()) -> VoxelVolume:
    return decode(g, obs.bottom, obs.top, cfg, obs.dims)
