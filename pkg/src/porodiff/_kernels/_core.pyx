# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled voxel kernels.

All arrays are C-contiguous and indexed ``[z, y, x]`` so that the flat
index equals the x-fastest raster index used throughout the package.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY
from libcpp.pair cimport pair
from libcpp.queue cimport priority_queue

cnp.import_array()


cdef void _envelope_1d(double* f, Py_ssize_t n, double* d,
                       Py_ssize_t* v, double* zb) noexcept nogil:
    # f has n + 2 entries; f[0] and f[n + 1] are the outside sites (value 0).
    cdef Py_ssize_t k = 0, q
    cdef double s
    cdef Py_ssize_t m = n + 2
    v[0] = 0
    zb[0] = -INFINITY
    zb[1] = INFINITY
    for q in range(1, m):
        if f[q] == INFINITY:
            continue
        while True:
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
            if s <= zb[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        zb[k] = s
        zb[k + 1] = INFINITY
    k = 0
    for q in range(1, n + 1):
        while zb[k + 1] < q:
            k += 1
        d[q - 1] = (q - v[k]) * (q - v[k]) + f[v[k]]


def edt_sq(const cnp.uint8_t[:, :, ::1] mask):
    """Exact squared EDT of the ``mask == 1`` phase; outside counts as 0."""
    cdef Py_ssize_t nz = mask.shape[0], ny = mask.shape[1], nx = mask.shape[2]
    cdef Py_ssize_t n = max(nx, max(ny, nz))
    out_arr = np.empty((nz, ny, nx), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] fbuf = np.empty(n + 2, dtype=np.float64)
    cdef double[::1] dbuf = np.empty(n, dtype=np.float64)
    cdef double[::1] zbuf = np.empty(n + 3, dtype=np.float64)
    cdef Py_ssize_t[::1] vbuf = np.empty(n + 2, dtype=np.intp)
    cdef Py_ssize_t x, y, z
    if nx == 0 or ny == 0 or nz == 0:
        return out_arr
    with nogil:
        for z in range(nz):
            for y in range(ny):
                fbuf[0] = 0.0
                fbuf[nx + 1] = 0.0
                for x in range(nx):
                    fbuf[x + 1] = INFINITY if mask[z, y, x] else 0.0
                _envelope_1d(&fbuf[0], nx, &dbuf[0], &vbuf[0], &zbuf[0])
                for x in range(nx):
                    out[z, y, x] = dbuf[x]
        for z in range(nz):
            for x in range(nx):
                fbuf[0] = 0.0
                fbuf[ny + 1] = 0.0
                for y in range(ny):
                    fbuf[y + 1] = out[z, y, x]
                _envelope_1d(&fbuf[0], ny, &dbuf[0], &vbuf[0], &zbuf[0])
                for y in range(ny):
                    out[z, y, x] = dbuf[y]
        for y in range(ny):
            for x in range(nx):
                fbuf[0] = 0.0
                fbuf[nz + 1] = 0.0
                for z in range(nz):
                    fbuf[z + 1] = out[z, y, x]
                _envelope_1d(&fbuf[0], nz, &dbuf[0], &vbuf[0], &zbuf[0])
                for z in range(nz):
                    out[z, y, x] = dbuf[z]
    return out_arr


cdef inline Py_ssize_t _find(Py_ssize_t* parent, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t root = i, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


cdef inline void _union(Py_ssize_t* parent, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


cdef int _backward_offsets(int connectivity, int* oz, int* oy, int* ox):
    # neighbours that precede a voxel in raster order
    cdef int k = 0, dz, dy, dx
    for dz in range(-1, 1):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dz == 0 and (dy > 0 or (dy == 0 and dx >= 0)):
                    continue
                if connectivity == 6 and abs(dz) + abs(dy) + abs(dx) != 1:
                    continue
                oz[k] = dz
                oy[k] = dy
                ox[k] = dx
                k += 1
    return k


def label(const cnp.uint8_t[:, :, ::1] mask, int connectivity):
    """Union-find labelling; labels follow first-encounter raster order."""
    cdef Py_ssize_t nz = mask.shape[0], ny = mask.shape[1], nx = mask.shape[2]
    cdef Py_ssize_t total = nz * ny * nx
    cdef int oz[13]
    cdef int oy[13]
    cdef int ox[13]
    cdef int nb = _backward_offsets(connectivity, oz, oy, ox)
    parent_arr = np.arange(total, dtype=np.intp)
    cdef Py_ssize_t[::1] parent = parent_arr
    labels_arr = np.zeros((nz, ny, nx), dtype=np.int32)
    cdef int[:, :, ::1] labels = labels_arr
    cdef int[::1] remap = np.zeros(total if total > 0 else 1, dtype=np.int32)
    cdef Py_ssize_t x, y, z, zz, yy, xx, idx, root
    cdef int k
    cdef int count = 0
    with nogil:
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    if not mask[z, y, x]:
                        continue
                    idx = (z * ny + y) * nx + x
                    for k in range(nb):
                        zz = z + oz[k]
                        yy = y + oy[k]
                        xx = x + ox[k]
                        if zz < 0 or yy < 0 or yy >= ny or xx < 0 or xx >= nx:
                            continue
                        if mask[zz, yy, xx]:
                            _union(&parent[0], idx, (zz * ny + yy) * nx + xx)
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    if not mask[z, y, x]:
                        continue
                    root = _find(&parent[0], (z * ny + y) * nx + x)
                    if remap[root] == 0:
                        count += 1
                        remap[root] = count
                    labels[z, y, x] = remap[root]
    return labels_arr, count


def watershed(const cnp.uint8_t[:, :, ::1] mask, const double[:, :, ::1] dist, int connectivity):
    """Seeded priority-flood watershed of ``mask`` over ``dist``.

    Seeds are 26-connected regional-maximum plateaus of ``dist``, one seed
    per plateau at its raster-minimal voxel. Flooding visits voxels in
    decreasing ``dist`` with ties broken by ascending raster index.
    """
    cdef Py_ssize_t nz = mask.shape[0], ny = mask.shape[1], nx = mask.shape[2]
    cdef Py_ssize_t total = nz * ny * nx
    cdef int oz[13]
    cdef int oy[13]
    cdef int ox[13]
    cdef int nb = _backward_offsets(26, oz, oy, ox)
    cdef int fz[26]
    cdef int fy[26]
    cdef int fx[26]
    cdef int nf = 0
    cdef int dz, dy, dx
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dz == 0 and dy == 0 and dx == 0:
                    continue
                if connectivity == 6 and abs(dz) + abs(dy) + abs(dx) != 1:
                    continue
                fz[nf] = dz
                fy[nf] = dy
                fx[nf] = dx
                nf += 1

    parent_arr = np.arange(total, dtype=np.intp)
    cdef Py_ssize_t[::1] parent = parent_arr
    higher_arr = np.zeros(total if total > 0 else 1, dtype=np.uint8)
    cdef cnp.uint8_t[::1] higher = higher_arr
    cdef cnp.uint8_t[::1] plateau_higher = np.zeros(total if total > 0 else 1, dtype=np.uint8)
    cdef cnp.uint8_t[::1] seeded = np.zeros(total if total > 0 else 1, dtype=np.uint8)
    labels_arr = np.zeros((nz, ny, nx), dtype=np.int32)
    cdef int[:, :, ::1] labels = labels_arr
    cdef Py_ssize_t x, y, z, zz, yy, xx, idx, nidx, root, best
    cdef int k
    cdef int count = 0
    cdef double dv, best_d
    cdef priority_queue[pair[double, Py_ssize_t]] heap
    cdef pair[double, Py_ssize_t] item

    with nogil:
        # plateau components and "has a strictly higher 26-neighbour" flags
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    if not mask[z, y, x]:
                        continue
                    idx = (z * ny + y) * nx + x
                    dv = dist[z, y, x]
                    for dz in range(-1, 2):
                        zz = z + dz
                        if zz < 0 or zz >= nz:
                            continue
                        for dy in range(-1, 2):
                            yy = y + dy
                            if yy < 0 or yy >= ny:
                                continue
                            for dx in range(-1, 2):
                                xx = x + dx
                                if xx < 0 or xx >= nx:
                                    continue
                                if mask[zz, yy, xx] and dist[zz, yy, xx] > dv:
                                    higher[idx] = 1
                    for k in range(nb):
                        zz = z + oz[k]
                        yy = y + oy[k]
                        xx = x + ox[k]
                        if zz < 0 or yy < 0 or yy >= ny or xx < 0 or xx >= nx:
                            continue
                        if mask[zz, yy, xx] and dist[zz, yy, xx] == dv:
                            _union(&parent[0], idx, (zz * ny + yy) * nx + xx)
        for idx in range(total):
            if higher[idx]:
                plateau_higher[_find(&parent[0], idx)] = 1
        # raster-minimal voxel of each regional-maximum plateau is its root
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    if not mask[z, y, x]:
                        continue
                    idx = (z * ny + y) * nx + x
                    root = _find(&parent[0], idx)
                    if plateau_higher[root] or seeded[root]:
                        continue
                    seeded[root] = 1
                    count += 1
                    labels[z, y, x] = count
                    heap.push(pair[double, Py_ssize_t](dist[z, y, x], -idx))

        while True:
            while not heap.empty():
                item = heap.top()
                heap.pop()
                idx = -item.second
                x = idx % nx
                y = (idx // nx) % ny
                z = idx // (nx * ny)
                for k in range(nf):
                    zz = z + fz[k]
                    yy = y + fy[k]
                    xx = x + fx[k]
                    if zz < 0 or zz >= nz or yy < 0 or yy >= ny or xx < 0 or xx >= nx:
                        continue
                    if mask[zz, yy, xx] and labels[zz, yy, xx] == 0:
                        labels[zz, yy, xx] = labels[z, y, x]
                        nidx = (zz * ny + yy) * nx + xx
                        heap.push(pair[double, Py_ssize_t](dist[zz, yy, xx], -nidx))
            # unreached pieces get a fresh seed at their highest voxel
            best = -1
            best_d = -1.0
            for z in range(nz):
                for y in range(ny):
                    for x in range(nx):
                        if mask[z, y, x] and labels[z, y, x] == 0 and dist[z, y, x] > best_d:
                            best_d = dist[z, y, x]
                            best = (z * ny + y) * nx + x
            if best < 0:
                break
            count += 1
            x = best % nx
            y = (best // nx) % ny
            z = best // (nx * ny)
            labels[z, y, x] = count
            heap.push(pair[double, Py_ssize_t](best_d, -best))
    return labels_arr, count
