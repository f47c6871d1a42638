"""Synthetic porous volumes and leakage-free block splits."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientVolume, TargetUnreachable
from .rng import SplitMix64
from .voxel import VoxelVolume

MAX_FIBER_JITTER_DEG = 10.0


@dataclass(frozen=True)
class SynthConfig:
    kind: str = "boolean_spheres"
    dims: tuple = (64, 64, 64)
    target_porosity: float = 0.3
    radius_range: tuple = (3.0, 6.0)
    fiber_axis: tuple = (0.0, 0.0, 1.0)
    fiber_radius: float = 2.0
    seed: int = 0
    max_placements: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "radius_range", tuple(float(r) for r in self.radius_range))
        object.__setattr__(self, "fiber_axis", tuple(float(a) for a in self.fiber_axis))
        if self.kind not in ("boolean_spheres", "fibers"):
            raise ConfigError(f"unknown kind {self.kind!r}")
        if len(self.dims) != 3 or min(self.dims) < 16:
            raise ConfigError(f"dims must be three extents >= 16, got {self.dims}")
        if not 0.0 < self.target_porosity < 1.0:
            raise ConfigError(f"target_porosity must lie in (0, 1), got {self.target_porosity}")
        lo, hi = self.radius_range
        if lo < 1.0 or hi < lo:
            raise ConfigError(f"radius_range must satisfy 1 <= min <= max, got {self.radius_range}")
        if self.kind == "fibers":
            if self.fiber_radius <= 0:
                raise ConfigError("fiber_radius must be positive")
            if math.hypot(*self.fiber_axis) == 0:
                raise ConfigError("fiber_axis must be non-zero")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


def rasterize_ball(dims, center, radius: float) -> np.ndarray:
    """Boolean mask of lattice points ``u`` with ``|u - center| <= radius``."""
    mask = np.zeros(dims, dtype=bool)
    _or_ball(mask, center, radius)
    return mask


def _or_ball(mask: np.ndarray, center, radius: float) -> None:
    lo = [max(0, int(math.floor(c - radius))) for c in center]
    hi = [min(n, int(math.ceil(c + radius)) + 1) for c, n in zip(center, mask.shape)]
    if any(h <= l for l, h in zip(lo, hi)):
        return
    gx, gy, gz = np.ogrid[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    d2 = (gx - center[0]) ** 2 + (gy - center[1]) ** 2 + (gz - center[2]) ** 2
    mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= d2 <= radius * radius


def rasterize_fiber(dims, point, direction, radius: float) -> np.ndarray:
    """Boolean mask of lattice points within ``radius`` of the infinite line."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    gx, gy, gz = np.ogrid[0:dims[0], 0:dims[1], 0:dims[2]]
    rx, ry, rz = gx - point[0], gy - point[1], gz - point[2]
    along = rx * d[0] + ry * d[1] + rz * d[2]
    d2 = rx * rx + ry * ry + rz * rz - along * along
    return d2 <= radius * radius


def generate_boolean_spheres(cfg: SynthConfig) -> VoxelVolume:
    """Union of randomly placed balls, added until porosity reaches the target."""
    rng = SplitMix64(cfg.seed)
    mask = np.zeros(cfg.dims, dtype=bool)
    total = mask.size
    lo, hi = cfg.radius_range
    pores = 0
    for _ in range(cfg.max_placements):
        center = tuple(rng.integer(n) for n in cfg.dims)
        radius = rng.uniform_range(lo, hi)
        _or_ball(mask, center, radius)
        pores = int(np.count_nonzero(mask))
        if pores / total >= cfg.target_porosity:
            return VoxelVolume(mask.astype(np.uint8))
    raise TargetUnreachable(
        f"porosity {pores / total:.4f} after {cfg.max_placements} spheres, target {cfg.target_porosity}"
    )


def fiber_parameters(cfg: SynthConfig, count: int):
    """The first ``count`` (point, direction) pairs of the fiber stream."""
    rng = SplitMix64(cfg.seed)
    out = []
    for _ in range(count):
        point = tuple(rng.uniform() * n for n in cfg.dims)
        direction = rng.unit_vector_in_cone(cfg.fiber_axis, MAX_FIBER_JITTER_DEG)
        out.append((point, direction))
    return out


def generate_fibers(cfg: SynthConfig) -> VoxelVolume:
    """Solid fibers along a jittered axis; pore is the complement."""
    rng = SplitMix64(cfg.seed)
    solid = np.zeros(cfg.dims, dtype=bool)
    total = solid.size
    phi = 1.0
    for _ in range(cfg.max_placements):
        point = tuple(rng.uniform() * n for n in cfg.dims)
        direction = rng.unit_vector_in_cone(cfg.fiber_axis, MAX_FIBER_JITTER_DEG)
        solid |= rasterize_fiber(cfg.dims, point, direction, cfg.fiber_radius)
        phi = 1.0 - np.count_nonzero(solid) / total
        if phi <= cfg.target_porosity:
            return VoxelVolume((~solid).astype(np.uint8))
    raise TargetUnreachable(
        f"porosity {phi:.4f} after {cfg.max_placements} fibers, target {cfg.target_porosity}"
    )


def generate(cfg: SynthConfig) -> VoxelVolume:
    if cfg.kind == "boolean_spheres":
        return generate_boolean_spheres(cfg)
    return generate_fibers(cfg)


@dataclass
class BlockSplit:
    crop_size: tuple
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"crop_size": list(self.crop_size), "train": self.train, "val": self.val, "test": self.test}
        )

    @classmethod
    def from_json(cls, text: str) -> "BlockSplit":
        d = json.loads(text)
        size = d["crop_size"]
        size = tuple(size) if isinstance(size, list) else (size,) * 3
        return cls(size, d["train"], d["val"], d["test"])


def _crop_tuple(crop) -> tuple:
    if isinstance(crop, int):
        return (crop, crop, crop)
    return tuple(int(c) for c in crop)


def partition_blocks(dims, crop, counts, seed: int) -> BlockSplit:
    """Assign disjoint grid-aligned crops to train/val/test.

    The volume is tiled by non-overlapping blocks; tiles are shuffled with
    SplitMix64 and dealt out in split order, so no voxel appears in two
    splits.
    """
    size = _crop_tuple(crop)
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or min(counts) < 0:
        raise ConfigError("counts must be three non-negative integers")
    grid = [int(d) // s for d, s in zip(dims, size)]
    origins = [
        [x * size[0], y * size[1], z * size[2]]
        for z in range(grid[2])
        for y in range(grid[1])
        for x in range(grid[0])
    ]
    need = sum(counts)
    if need > len(origins):
        raise InsufficientVolume(f"{need} crops of {size} requested, volume {tuple(dims)} holds {len(origins)}")
    rng = SplitMix64(seed)
    for i in range(len(origins) - 1, 0, -1):
        j = rng.integer(i + 1)
        origins[i], origins[j] = origins[j], origins[i]
    a, b, c = counts
    return BlockSplit(size, origins[:a], origins[a:a + b], origins[a + b:a + b + c])


def extract_crop(v: VoxelVolume, origin, size) -> VoxelVolume:
    x, y, z = origin
    sx, sy, sz = _crop_tuple(size)
    return VoxelVolume(v.data[x:x + sx, y:y + sy, z:z + sz])


def box_overlap(o1, o2, size) -> int:
    """Voxel count of the intersection of two equally sized axis-aligned crops."""
    vol = 1
    for a, b, s in zip(o1, o2, _crop_tuple(size)):
        vol *= max(0, min(a + s, b + s) - max(a, b))
    return vol


def max_cross_split_iou(split: BlockSplit) -> float:
    size = _crop_tuple(split.crop_size)
    crop_vol = size[0] * size[1] * size[2]
    groups = [split.train, split.val, split.test]
    best = 0.0
    for gi in range(3):
        for gj in range(gi + 1, 3):
            for a in groups[gi]:
                for b in groups[gj]:
                    inter = box_overlap(a, b, size)
                    best = max(best, inter / (2 * crop_vol - inter))
    return best
