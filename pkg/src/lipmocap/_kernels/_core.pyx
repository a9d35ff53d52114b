# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for geometry and the PointNet max-pool gradient.

Arithmetic is written term-by-term in the same order as ``_fallback`` so both
paths agree bit-for-bit on FPS and nearest-neighbour queries.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs

cnp.import_array()


def fps_indices(double[:, ::1] points, Py_ssize_t n, Py_ssize_t start):
    cdef Py_ssize_t N = points.shape[0]
    cdef Py_ssize_t i, k, cur, best
    cdef double dx, dy, dz, d, bestd
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] sel = out
    mind_arr = np.full(N, INFINITY, dtype=np.float64)
    cdef double[::1] mind = mind_arr

    cur = start
    for k in range(n):
        sel[k] = cur
        best = -1
        bestd = -1.0
        for i in range(N):
            dx = points[i, 0] - points[cur, 0]
            dy = points[i, 1] - points[cur, 1]
            dz = points[i, 2] - points[cur, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < mind[i]:
                mind[i] = d
            if mind[i] > bestd:
                bestd = mind[i]
                best = i
        cur = best
    return out


def nearest_sq_dist(double[:, ::1] query, double[:, ::1] ref):
    cdef Py_ssize_t N = query.shape[0]
    cdef Py_ssize_t M = ref.shape[0]
    cdef Py_ssize_t i, j
    cdef double qx, qy, qz, dx, dy, dz, d, best
    out = np.empty(N, dtype=np.float64)
    cdef double[::1] res = out
    for i in range(N):
        qx = query[i, 0]
        qy = query[i, 1]
        qz = query[i, 2]
        best = INFINITY
        for j in range(M):
            dx = qx - ref[j, 0]
            dy = qy - ref[j, 1]
            dz = qz - ref[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        res[i] = best
    return out


def ray_cast(double[::1] origin, double[:, ::1] dirs, double[:, ::1] vertices,
             cnp.int64_t[:, ::1] triangles, double t_max):
    """Nearest two-sided Moller-Trumbore hit per ray; (t, triangle) with -1 on miss."""
    cdef Py_ssize_t R = dirs.shape[0]
    cdef Py_ssize_t M = triangles.shape[0]
    cdef Py_ssize_t r, m
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double dxr, dyr, dzr
    cdef double ax, ay, az, e1x, e1y, e1z, e2x, e2y, e2z
    cdef double px, py, pz, det, inv, sx, sy, sz, u, v, qx, qy, qz, t, best
    cdef Py_ssize_t besti
    t_out = np.full(R, INFINITY, dtype=np.float64)
    i_out = np.full(R, -1, dtype=np.int64)
    cdef double[::1] tv = t_out
    cdef cnp.int64_t[::1] iv = i_out

    for r in range(R):
        dxr = dirs[r, 0]
        dyr = dirs[r, 1]
        dzr = dirs[r, 2]
        best = t_max
        besti = -1
        for m in range(M):
            ax = vertices[triangles[m, 0], 0]
            ay = vertices[triangles[m, 0], 1]
            az = vertices[triangles[m, 0], 2]
            e1x = vertices[triangles[m, 1], 0] - ax
            e1y = vertices[triangles[m, 1], 1] - ay
            e1z = vertices[triangles[m, 1], 2] - az
            e2x = vertices[triangles[m, 2], 0] - ax
            e2y = vertices[triangles[m, 2], 1] - ay
            e2z = vertices[triangles[m, 2], 2] - az
            px = dyr * e2z - dzr * e2y
            py = dzr * e2x - dxr * e2z
            pz = dxr * e2y - dyr * e2x
            det = e1x * px + e1y * py + e1z * pz
            if fabs(det) < 1e-12:
                continue
            inv = 1.0 / det
            sx = ox - ax
            sy = oy - ay
            sz = oz - az
            u = (sx * px + sy * py + sz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dxr * qx + dyr * qy + dzr * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if t > 1e-9 and t < best:
                best = t
                besti = m
        if besti >= 0:
            tv[r] = best
            iv[r] = besti
    return t_out, i_out


ctypedef fused real:
    float
    double


def maxpool_scatter(cnp.int64_t[:, ::1] idx, real[:, ::1] g, real[:, ::1] w, Py_ssize_t n_points):
    """Input gradient of a linear layer followed by a max over points.

    ``dx[f, idx[f, k], :] += g[f, k] * w[:, k]``, accumulated in ascending
    ``(f, k)`` order.
    """
    cdef Py_ssize_t F = idx.shape[0]
    cdef Py_ssize_t K = idx.shape[1]
    cdef Py_ssize_t C = w.shape[0]
    cdef Py_ssize_t f, k, c, p
    cdef real gv
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((F, n_points, C), dtype=dtype)
    cdef real[:, :, ::1] dx = out
    for f in range(F):
        for k in range(K):
            gv = g[f, k]
            if gv == 0:
                continue
            p = idx[f, k]
            for c in range(C):
                dx[f, p, c] += gv * w[c, k]
    return out
