"""Pure-Python versions of the compiled kernels.

Same algorithms and the same visitation order as ``_core.pyx``, so both
backends return identical arrays. Arrays are C-contiguous ``[z, y, x]``.
"""
from __future__ import annotations

import heapq
import itertools

import numpy as np

_INF = float("inf")


def _envelope_1d(f: list[float]) -> list[float]:
    # f carries the two outside sites at positions 0 and len(f) - 1
    n = len(f) - 2
    v = [0]
    zb = [-_INF, _INF]
    for q in range(1, n + 2):
        fq = f[q]
        if fq == _INF:
            continue
        while True:
            vk = v[-1]
            s = ((fq + q * q) - (f[vk] + vk * vk)) / (2.0 * q - 2.0 * vk)
            if s <= zb[len(v) - 1]:
                v.pop()
                zb.pop()
            else:
                break
        v.append(q)
        zb[-1] = s
        zb.append(_INF)
    out = [0.0] * n
    k = 0
    for q in range(1, n + 1):
        while zb[k + 1] < q:
            k += 1
        out[q - 1] = (q - v[k]) * (q - v[k]) + f[v[k]]
    return out


def edt_sq(mask: np.ndarray) -> np.ndarray:
    nz, ny, nx = mask.shape
    out = np.where(mask.astype(bool), _INF, 0.0)
    if out.size == 0:
        return out
    for axis in (2, 1, 0):
        moved = np.moveaxis(out, axis, -1)
        flat = moved.reshape(-1, moved.shape[-1])
        res = np.empty_like(flat)
        for row in range(flat.shape[0]):
            line = [0.0] + flat[row].tolist() + [0.0]
            res[row] = _envelope_1d(line)
        out = np.moveaxis(res.reshape(moved.shape), -1, axis).copy()
    return np.ascontiguousarray(out)


def _offsets(connectivity: int, backward: bool) -> list[tuple[int, int, int]]:
    offs = []
    for dz, dy, dx in itertools.product((-1, 0, 1), repeat=3):
        if (dz, dy, dx) == (0, 0, 0):
            continue
        if connectivity == 6 and abs(dz) + abs(dy) + abs(dx) != 1:
            continue
        if backward and (dz, dy, dx) <= (0, 0, 0):
            offs.append((dz, dy, dx))
        elif not backward:
            offs.append((dz, dy, dx))
    return offs


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        parent = self.parent
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(self, a: int, b: int) -> None:
        a, b = self.find(a), self.find(b)
        if a < b:
            self.parent[b] = a
        elif b < a:
            self.parent[a] = b


def label(mask: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    nz, ny, nx = mask.shape
    m = mask.astype(bool)
    ds = _DisjointSet(m.size)
    offs = _offsets(connectivity, backward=True)
    pts = np.argwhere(m)
    for z, y, x in pts.tolist():
        idx = (z * ny + y) * nx + x
        for dz, dy, dx in offs:
            zz, yy, xx = z + dz, y + dy, x + dx
            if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx and m[zz, yy, xx]:
                ds.union(idx, (zz * ny + yy) * nx + xx)
    labels = np.zeros((nz, ny, nx), dtype=np.int32)
    remap: dict[int, int] = {}
    for z, y, x in pts.tolist():
        root = ds.find((z * ny + y) * nx + x)
        if root not in remap:
            remap[root] = len(remap) + 1
        labels[z, y, x] = remap[root]
    return labels, len(remap)


def watershed(mask: np.ndarray, dist: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    nz, ny, nx = mask.shape
    m = mask.astype(bool)
    d = dist
    ds = _DisjointSet(m.size)
    back = _offsets(26, backward=True)
    every = _offsets(26, backward=False)
    flood = _offsets(connectivity, backward=False)
    pts = np.argwhere(m).tolist()
    higher = set()
    for z, y, x in pts:
        idx = (z * ny + y) * nx + x
        dv = d[z, y, x]
        for dz, dy, dx in every:
            zz, yy, xx = z + dz, y + dy, x + dx
            if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx and m[zz, yy, xx]:
                if d[zz, yy, xx] > dv:
                    higher.add(idx)
                    break
        for dz, dy, dx in back:
            zz, yy, xx = z + dz, y + dy, x + dx
            if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx and m[zz, yy, xx]:
                if d[zz, yy, xx] == dv:
                    ds.union(idx, (zz * ny + yy) * nx + xx)
    plateau_higher = {ds.find(i) for i in higher}
    labels = np.zeros((nz, ny, nx), dtype=np.int32)
    heap: list[tuple[float, int]] = []
    seeded = set()
    count = 0
    for z, y, x in pts:
        idx = (z * ny + y) * nx + x
        root = ds.find(idx)
        if root in plateau_higher or root in seeded:
            continue
        seeded.add(root)
        count += 1
        labels[z, y, x] = count
        heap.append((-float(d[z, y, x]), idx))
    heapq.heapify(heap)
    while True:
        while heap:
            _, idx = heapq.heappop(heap)
            x = idx % nx
            y = (idx // nx) % ny
            z = idx // (nx * ny)
            lab = labels[z, y, x]
            for dz, dy, dx in flood:
                zz, yy, xx = z + dz, y + dy, x + dx
                if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx:
                    if m[zz, yy, xx] and labels[zz, yy, xx] == 0:
                        labels[zz, yy, xx] = lab
                        heapq.heappush(heap, (-float(d[zz, yy, xx]), (zz * ny + yy) * nx + xx))
        rest = m & (labels == 0)
        if not rest.any():
            break
        flat = np.where(rest.ravel(), d.ravel(), -1.0)
        best = int(np.argmax(flat))
        count += 1
        labels.flat[best] = count
        heapq.heappush(heap, (-float(flat[best]), best))
    return labels, count
