"""Compare the compiled kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per kernel for both backends and the speedup.
Outputs are checked for equality before timing.
"""
import argparse
import timeit

import numpy as np

from lipmocap._kernels import _fallback
from lipmocap.kinematics import default_skeleton, fk_batch, pose_mesh_batch, proxy_mesh_for

try:
    from lipmocap._kernels import _core
except ImportError:  # extension not built
    _core = None


def cases():
    rng = np.random.default_rng(0)
    skel = default_skeleton()
    mesh = proxy_mesh_for(skel)
    R = np.broadcast_to(np.eye(3), (1, skel.n_joints, 3, 3))
    verts = np.ascontiguousarray(pose_mesh_batch(mesh, *fk_batch(skel, R, np.array([[0.0, 8.0, 0.95]])))[0])
    tris = np.ascontiguousarray(mesh.triangles)
    dirs = rng.normal(size=(2000, 3)) * [0.06, 1.0, 0.12] + [0.0, 1.0, 0.0]
    dirs = np.ascontiguousarray(dirs / np.linalg.norm(dirs, axis=1, keepdims=True))
    origin = np.array([0.0, 0.0, 1.0])
    cloud = np.ascontiguousarray(rng.normal(size=(120, 3)))
    big = np.ascontiguousarray(rng.normal(size=(2000, 3)))
    F, P, C, K = 64, 256, 128, 1024
    idx = rng.integers(0, P, size=(F, K)).astype(np.int64)
    g = rng.normal(size=(F, K)).astype(np.float32)
    w = rng.normal(size=(C, K)).astype(np.float32)
    return {
        "fps 2000 -> 256": ("fps_indices", (big, 256, 0)),
        "fps 120 -> 64": ("fps_indices", (cloud, 64, 0)),
        "nearest 120 x 1178": ("nearest_sq_dist", (cloud, verts)),
        "ray cast 2000 rays x 2280 tris": ("ray_cast", (origin, dirs, verts, tris, 100.0)),
        "max-pool scatter 64x256x128x1024": ("maxpool_scatter", (idx, g, w, P)),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _core is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<36} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for label, (name, argv) in cases().items():
        fb = getattr(_fallback, name)
        t_fb = min(timeit.repeat(lambda: fb(*argv), number=1, repeat=args.repeat)) * 1e3
        if _core is None:
            print(f"{label:<36} {t_fb:>10.3f} {'-':>10} {'-':>8}")
            continue
        cc = getattr(_core, name)
        if name == "ray_cast":
            ta, fa = cc(*argv)
            tb, fb_ = fb(*argv)
            same = np.array_equal(fa, fb_) and np.allclose(ta[fa >= 0], tb[fb_ >= 0], rtol=0, atol=1e-12)
        else:
            same = _same(cc(*argv), fb(*argv))
        t_cc = min(timeit.repeat(lambda: cc(*argv), number=1, repeat=args.repeat)) * 1e3
        flag = "" if same else "  OUTPUT MISMATCH"
        print(f"{label:<36} {t_fb:>10.3f} {t_cc:>10.3f} {t_fb / t_cc:>7.1f}x{flag}")


if __name__ == "__main__":
    main()
