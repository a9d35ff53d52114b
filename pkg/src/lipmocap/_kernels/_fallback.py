"""Pure-numpy versions of the compiled kernels in ``_core.pyx``.

Expression order mirrors the compiled code so results match exactly.
"""
import numpy as np


def fps_indices(points, n, start):
    points = np.ascontiguousarray(points, dtype=np.float64)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    mind = np.full(points.shape[0], np.inf)
    out = np.empty(n, dtype=np.int64)
    cur = int(start)
    for k in range(n):
        out[k] = cur
        dx = x - x[cur]
        dy = y - y[cur]
        dz = z - z[cur]
        d = dx * dx + dy * dy + dz * dz
        np.minimum(mind, d, out=mind)
        cur = int(np.argmax(mind))
    return out


def nearest_sq_dist(query, ref, chunk=2048):
    query = np.ascontiguousarray(query, dtype=np.float64)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    out = np.empty(query.shape[0])
    for lo in range(0, query.shape[0], chunk):
        q = query[lo:lo + chunk]
        dx = q[:, None, 0] - ref[None, :, 0]
        dy = q[:, None, 1] - ref[None, :, 1]
        dz = q[:, None, 2] - ref[None, :, 2]
        out[lo:lo + chunk] = (dx * dx + dy * dy + dz * dz).min(axis=1)
    return out


def ray_cast(origin, dirs, vertices, triangles, t_max, chunk=256):
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    R = dirs.shape[0]
    t_out = np.full(R, np.inf)
    i_out = np.full(R, -1, dtype=np.int64)
    if R == 0 or triangles.shape[0] == 0:
        return t_out, i_out

    a = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - a
    e2 = vertices[triangles[:, 2]] - a
    s = origin[None, :] - a
    e1x, e1y, e1z = e1[:, 0], e1[:, 1], e1[:, 2]
    e2x, e2y, e2z = e2[:, 0], e2[:, 1], e2[:, 2]
    sx, sy, sz = s[:, 0], s[:, 1], s[:, 2]
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    tnum = e2x * qx + e2y * qy + e2z * qz

    with np.errstate(divide="ignore", invalid="ignore"):
        for lo in range(0, R, chunk):
            d = dirs[lo:lo + chunk]
            dxr, dyr, dzr = d[:, 0:1], d[:, 1:2], d[:, 2:3]
            px = dyr * e2z - dzr * e2y
            py = dzr * e2x - dxr * e2z
            pz = dxr * e2y - dyr * e2x
            det = e1x * px + e1y * py + e1z * pz
            ok = np.abs(det) >= 1e-12
            inv = 1.0 / det
            u = (sx * px + sy * py + sz * pz) * inv
            ok &= (u >= 0.0) & (u <= 1.0)
            v = (dxr * qx + dyr * qy + dzr * qz) * inv
            ok &= (v >= 0.0) & (u + v <= 1.0)
            t = tnum * inv
            ok &= (t > 1e-9) & (t < t_max)
            t = np.where(ok, t, np.inf)
            best = np.argmin(t, axis=1)
            tb = t[np.arange(t.shape[0]), best]
            hit = np.isfinite(tb)
            t_out[lo:lo + chunk] = tb
            i_out[lo:lo + chunk] = np.where(hit, best, -1)
    return t_out, i_out


def maxpool_scatter(idx, g, w, n_points):
    F, K = idx.shape
    C = w.shape[0]
    dx = np.zeros((F * n_points, C), dtype=g.dtype)
    keep = (g != 0).ravel()
    rows = (idx + np.arange(F)[:, None] * n_points).ravel()[keep]
    vals = (g[:, :, None] * w.T[None, :, :]).reshape(F * K, C)[keep]
    np.add.at(dx, rows, vals)
    return dx.reshape(F, n_points, C)
