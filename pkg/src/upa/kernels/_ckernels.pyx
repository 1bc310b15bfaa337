# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: exact grid kNN, farthest-point sampling, and the
fused neighborhood attention aggregation.

Results must match the fallback lane: kNN and FPS bit-exactly (squared
distances use the same x,y,z summation order and ties break by lower
index), attention to float tolerance.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, pow, INFINITY

cnp.import_array()


cdef inline bint _worse(double d2a, long long ia, double d2b, long long ib) noexcept:
    # heap priority: larger squared distance first, larger index on ties
    return d2a > d2b or (d2a == d2b and ia > ib)


cdef inline void _sift_down(double* hd2, long long* hidx, Py_ssize_t size,
                            Py_ssize_t root) noexcept:
    cdef Py_ssize_t child
    cdef double d2 = hd2[root]
    cdef long long ix = hidx[root]
    while True:
        child = 2 * root + 1
        if child >= size:
            break
        if child + 1 < size and _worse(hd2[child + 1], hidx[child + 1],
                                       hd2[child], hidx[child]):
            child += 1
        if _worse(hd2[child], hidx[child], d2, ix):
            hd2[root] = hd2[child]
            hidx[root] = hidx[child]
            root = child
        else:
            break
    hd2[root] = d2
    hidx[root] = ix


cdef inline void _heap_push(double* hd2, long long* hidx, Py_ssize_t* size,
                            double d2, long long ix) noexcept:
    cdef Py_ssize_t pos = size[0], parent
    hd2[pos] = d2
    hidx[pos] = ix
    size[0] += 1
    while pos > 0:
        parent = (pos - 1) // 2
        if _worse(hd2[pos], hidx[pos], hd2[parent], hidx[parent]):
            hd2[pos], hd2[parent] = hd2[parent], hd2[pos]
            hidx[pos], hidx[parent] = hidx[parent], hidx[pos]
            pos = parent
        else:
            break


def fps(double[:, ::1] points, Py_ssize_t m, Py_ssize_t start):
    """Greedy farthest-point selection; ties go to the lowest index."""
    cdef Py_ssize_t n = points.shape[0]
    out_arr = np.empty(m, dtype=np.int64)
    mind2_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] out = out_arr
    cdef double[::1] mind2 = mind2_arr
    cdef Py_ssize_t i, j, best
    cdef double dx, dy, dz, d2, bestval
    cdef Py_ssize_t cur = start

    out[0] = start
    for j in range(n):
        dx = points[j, 0] - points[cur, 0]
        dy = points[j, 1] - points[cur, 1]
        dz = points[j, 2] - points[cur, 2]
        mind2[j] = dx * dx + dy * dy + dz * dz
    for i in range(1, m):
        best = 0
        bestval = mind2[0]
        for j in range(1, n):
            if mind2[j] > bestval:
                bestval = mind2[j]
                best = j
        out[i] = best
        for j in range(n):
            dx = points[j, 0] - points[best, 0]
            dy = points[j, 1] - points[best, 1]
            dz = points[j, 2] - points[best, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < mind2[j]:
                mind2[j] = d2
    return out_arr


def knn_grid(double[:, ::1] points, double[:, ::1] queries, Py_ssize_t k):
    """Exact k nearest neighbors via a uniform grid with ring expansion.

    A candidate heap keeps the best (d2, index) pairs; a ring of cells at
    Chebyshev cell-offset r only contains points at distance >= (r-1)*h,
    so expansion stops once that bound strictly exceeds the current k-th
    best distance. Exact distance ties never stop expansion early, which
    preserves the lower-index tie-break.
    """
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = queries.shape[0]
    cdef Py_ssize_t i, j, axis

    # bounding box
    cdef double[3] mins
    cdef double[3] maxs
    cdef double[3] ext
    for axis in range(3):
        mins[axis] = points[0, axis]
        maxs[axis] = points[0, axis]
    for i in range(1, n):
        for axis in range(3):
            if points[i, axis] < mins[axis]:
                mins[axis] = points[i, axis]
            if points[i, axis] > maxs[axis]:
                maxs[axis] = points[i, axis]
    cdef double maxext = 0.0
    for axis in range(3):
        ext[axis] = maxs[axis] - mins[axis]
        if ext[axis] > maxext:
            maxext = ext[axis]

    # cell edge targeting ~2 points per occupied cell
    cdef double h
    cdef double measure = 1.0
    cdef int live = 0
    if maxext == 0.0:
        h = 1.0
    else:
        for axis in range(3):
            if ext[axis] > 1e-9 * maxext:
                measure *= ext[axis]
                live += 1
        h = pow(measure * 2.0 / n, 1.0 / live)

    cdef Py_ssize_t[3] nc
    cdef Py_ssize_t total
    while True:
        total = 1
        for axis in range(3):
            nc[axis] = <Py_ssize_t>(ext[axis] / h) + 1
            if nc[axis] < 1:
                nc[axis] = 1
            total *= nc[axis]
        if total <= 4 * n + 64:
            break
        h *= 1.2599210498948732  # cbrt(2): halves the cell count

    # counting sort of points into cells
    cell_arr = np.empty(n, dtype=np.int64)
    starts_arr = np.zeros(total + 1, dtype=np.int64)
    order_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] cell = cell_arr
    cdef long long[::1] starts = starts_arr
    cdef long long[::1] order = order_arr
    cdef Py_ssize_t cx, cy, cz
    for i in range(n):
        cx = <Py_ssize_t>((points[i, 0] - mins[0]) / h)
        cy = <Py_ssize_t>((points[i, 1] - mins[1]) / h)
        cz = <Py_ssize_t>((points[i, 2] - mins[2]) / h)
        if cx >= nc[0]: cx = nc[0] - 1
        if cy >= nc[1]: cy = nc[1] - 1
        if cz >= nc[2]: cz = nc[2] - 1
        cell[i] = (cx * nc[1] + cy) * nc[2] + cz
    for i in range(n):
        starts[cell[i] + 1] += 1
    for i in range(total):
        starts[i + 1] += starts[i]
    fill_arr = starts_arr[:total].copy()
    cdef long long[::1] fill = fill_arr
    for i in range(n):
        order[fill[cell[i]]] = i
        fill[cell[i]] += 1

    out_arr = np.empty((m, k), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    hd2_arr = np.empty(k, dtype=np.float64)
    hidx_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] hd2v = hd2_arr
    cdef long long[::1] hidxv = hidx_arr
    cdef double* hd2 = &hd2v[0]
    cdef long long* hidx = &hidxv[0]

    cdef Py_ssize_t size, r, rmax, dx_c, dy_c, dz_c, x, y, z, c, p, lo, hi
    cdef long long pi
    cdef double qx, qy, qz, ddx, ddy, ddz, d2, bound
    cdef long long tmp_i
    cdef double tmp_d
    cdef bint edge_x, edge_y

    for i in range(m):
        qx = queries[i, 0]
        qy = queries[i, 1]
        qz = queries[i, 2]
        cx = <Py_ssize_t>((qx - mins[0]) / h)
        cy = <Py_ssize_t>((qy - mins[1]) / h)
        cz = <Py_ssize_t>((qz - mins[2]) / h)
        if cx < 0: cx = 0
        if cy < 0: cy = 0
        if cz < 0: cz = 0
        if cx >= nc[0]: cx = nc[0] - 1
        if cy >= nc[1]: cy = nc[1] - 1
        if cz >= nc[2]: cz = nc[2] - 1
        rmax = 0
        if cx > rmax: rmax = cx
        if nc[0] - 1 - cx > rmax: rmax = nc[0] - 1 - cx
        if cy > rmax: rmax = cy
        if nc[1] - 1 - cy > rmax: rmax = nc[1] - 1 - cy
        if cz > rmax: rmax = cz
        if nc[2] - 1 - cz > rmax: rmax = nc[2] - 1 - cz

        size = 0
        r = 0
        while r <= rmax:
            for dx_c in range(-r, r + 1):
                x = cx + dx_c
                if x < 0 or x >= nc[0]:
                    continue
                edge_x = (dx_c == -r or dx_c == r)
                for dy_c in range(-r, r + 1):
                    y = cy + dy_c
                    if y < 0 or y >= nc[1]:
                        continue
                    edge_y = (dy_c == -r or dy_c == r)
                    dz_c = -r
                    while dz_c <= r:
                        if not (edge_x or edge_y or dz_c == -r or dz_c == r):
                            dz_c += 1
                            continue
                        z = cz + dz_c
                        if 0 <= z < nc[2]:
                            c = (x * nc[1] + y) * nc[2] + z
                            lo = starts[c]
                            hi = starts[c + 1]
                            for p in range(lo, hi):
                                pi = order[p]
                                ddx = qx - points[pi, 0]
                                ddy = qy - points[pi, 1]
                                ddz = qz - points[pi, 2]
                                d2 = ddx * ddx + ddy * ddy + ddz * ddz
                                if size < k:
                                    _heap_push(hd2, hidx, &size, d2, pi)
                                elif _worse(hd2[0], hidx[0], d2, pi):
                                    hd2[0] = d2
                                    hidx[0] = pi
                                    _sift_down(hd2, hidx, size, 0)
                        dz_c += 1
            if size == k:
                # points beyond ring r sit at distance >= r*h from the query
                bound = r * h
                if bound * bound > hd2[0]:
                    break
            r += 1

        # heap-sort ascending by (d2, index)
        j = size - 1
        while j > 0:
            tmp_d = hd2[0]; hd2[0] = hd2[j]; hd2[j] = tmp_d
            tmp_i = hidx[0]; hidx[0] = hidx[j]; hidx[j] = tmp_i
            _sift_down(hd2, hidx, j, 0)
            j -= 1
        for j in range(k):
            out[i, j] = hidx[j]
    return out_arr


def attend(double[:, :, ::1] scores, double[:, ::1] values,
           long long[:, ::1] idx, Py_ssize_t heads, double[:, ::1] out):
    """Fused softmax-over-neighbors aggregation; see fallback.attend."""
    cdef Py_ssize_t m = scores.shape[0]
    cdef Py_ssize_t k = scores.shape[1]
    cdef Py_ssize_t d = values.shape[1]
    cdef Py_ssize_t dh = d // heads
    wbuf_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] wbuf = wbuf_arr
    cdef Py_ssize_t i, j, t, c, base
    cdef long long row
    cdef double mx, z, w, e

    for i in range(m):
        for t in range(heads):
            mx = -INFINITY
            for j in range(k):
                if scores[i, j, t] > mx:
                    mx = scores[i, j, t]
            z = 0.0
            for j in range(k):
                e = exp(scores[i, j, t] - mx)
                wbuf[j] = e
                z += e
            base = t * dh
            for c in range(dh):
                out[i, base + c] = 0.0
            for j in range(k):
                w = wbuf[j] / z
                row = idx[i, j]
                for c in range(dh):
                    out[i, base + c] += w * values[row, base + c]
    return None
