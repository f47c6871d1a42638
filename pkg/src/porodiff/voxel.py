"""Binary 3D volumes, exact distance transform, component labelling and GTPV I/O.

Volumes are stored as ``uint8`` arrays indexed ``[x, y, z]`` in Fortran
order, so the flat buffer is x-fastest, exactly like the GTPV payload.
Kernels receive the transposed ``[z, y, x]`` C-contiguous view.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import BadMagic, DimMismatch, FormatError, IoFailure, UnsupportedVersion

MAGIC = b"GTPV"
VERSION = 1
HEADER_SIZE = 32
_HEADER = struct.Struct("<4sI3I12x")


def _as_field(data, dtype) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"expected a 3D array with positive extents, got shape {arr.shape}")
    return np.asfortranarray(arr, dtype=dtype)


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """Binary phase field; 1 = pore, 0 = solid."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_field(self.data, np.uint8)
        if arr.size and arr.max() > 1:
            raise ValueError("voxel values must be 0 or 1")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.data.shape)

    @property
    def zyx(self) -> np.ndarray:
        return self.data.T

    @property
    def bottom(self) -> np.ndarray:
        return np.array(self.data[:, :, 0])

    @property
    def top(self) -> np.ndarray:
        return np.array(self.data[:, :, -1])

    def __eq__(self, other):
        if not isinstance(other, VoxelVolume):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.dims, self.data.tobytes(order="F")))

    def tobytes(self) -> bytes:
        return self.data.tobytes(order="F")

    def complement(self) -> "VoxelVolume":
        return VoxelVolume(1 - self.data)

    @classmethod
    def zeros(cls, dims) -> "VoxelVolume":
        return cls(np.zeros(tuple(dims), dtype=np.uint8))

    @classmethod
    def ones(cls, dims) -> "VoxelVolume":
        return cls(np.ones(tuple(dims), dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Non-negative 32-bit labels, 0 = background, no gaps in ``1..count``."""

    data: np.ndarray
    count: int

    def __post_init__(self):
        object.__setattr__(self, "data", _as_field(self.data, np.int32))

    @property
    def dims(self):
        return tuple(int(s) for s in self.data.shape)


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Squared Euclidean distances in voxel² units."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_field(self.data, np.float64))

    @property
    def dims(self):
        return tuple(int(s) for s in self.data.shape)

    def sqrt(self) -> np.ndarray:
        return np.sqrt(self.data)


def encode_volume(v: VoxelVolume) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, *v.dims) + v.tobytes()


def decode_volume(raw: bytes) -> VoxelVolume:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"not a GTPV container (magic {raw[:4]!r})")
    if len(raw) < HEADER_SIZE:
        raise DimMismatch(f"truncated header: {len(raw)} bytes")
    _, version, h, w, l = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersion(f"GTPV version {version} (supported: {VERSION})")
    if min(h, w, l) < 1:
        raise FormatError(f"non-positive dims {(h, w, l)}")
    payload = raw[HEADER_SIZE:]
    if len(payload) != h * w * l:
        raise DimMismatch(f"payload has {len(payload)} bytes, header declares {h}x{w}x{l}={h * w * l}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if arr.size and arr.max() > 1:
        raise FormatError("payload voxels must be 0 or 1")
    return VoxelVolume(arr.reshape((h, w, l), order="F"))


def load_volume(path) -> VoxelVolume:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_volume(raw)


def save_volume(v: VoxelVolume, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(encode_volume(v))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def porosity(v: VoxelVolume) -> float:
    return int(np.count_nonzero(v.data)) / v.data.size


def _phase_mask(v: VoxelVolume, phase: int) -> np.ndarray:
    if phase not in (0, 1):
        raise ValueError("phase must be 0 or 1")
    zyx = v.zyx
    return np.ascontiguousarray(zyx if phase == 1 else 1 - zyx, dtype=np.uint8)


def connected_components(v: VoxelVolume, phase: int = 1, connectivity: int = 6) -> tuple[LabelVolume, int]:
    """Label the components of ``phase``; labels follow raster first encounter."""
    if connectivity not in (6, 26):
        raise ValueError("connectivity must be 6 or 26")
    labels, count = _kernels.label(_phase_mask(v, phase), connectivity)
    return LabelVolume(labels.T, int(count)), int(count)


def edt(v: VoxelVolume, phase: int = 1) -> DistanceField:
    """Exact squared EDT of ``phase`` to the other phase.

    Voxels outside the volume count as the other phase, so distances are
    bounded near faces.
    """
    return DistanceField(_kernels.edt_sq(_phase_mask(v, phase)).T)


def remove_small_components(v: VoxelVolume, min_size: int, connectivity: int = 6) -> VoxelVolume:
    """Drop pore components with fewer than ``min_size`` voxels."""
    labels, count = connected_components(v, 1, connectivity)
    if count == 0 or min_size <= 1:
        return v
    sizes = np.bincount(labels.data.ravel(order="F"), minlength=count + 1)
    keep = sizes >= min_size
    keep[0] = False
    return VoxelVolume(keep[labels.data].astype(np.uint8))
