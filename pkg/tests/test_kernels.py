import os
import subprocess
import sys

import numpy as np
import pytest

from lipmocap import _kernels
from lipmocap._kernels import _fallback
from lipmocap.kinematics import default_skeleton, fk_batch, pose_mesh_batch, proxy_mesh_for

core = pytest.importorskip("lipmocap._kernels._core")


def test_compiled_backend_selected():
    assert _kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    code = "import lipmocap._kernels as k; print(k.BACKEND)"
    env = dict(os.environ, LIPMOCAP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("seed", range(10))
def test_fps_backends_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.integers(-3, 4, size=(rng.integers(2, 300), 3)).astype(np.float64)  # many ties
    n = int(rng.integers(1, len(pts) + 1))
    start = int(rng.integers(len(pts)))
    assert np.array_equal(core.fps_indices(pts, n, start), _fallback.fps_indices(pts, n, start))


@pytest.mark.parametrize("seed", range(10))
def test_nearest_backends_agree(seed):
    rng = np.random.default_rng(seed)
    q, r = rng.normal(size=(50, 3)), rng.normal(size=(70, 3))
    assert np.array_equal(core.nearest_sq_dist(q, r), _fallback.nearest_sq_dist(q, r))


def test_ray_cast_backends_agree():
    rng = np.random.default_rng(0)
    skel = default_skeleton()
    mesh = proxy_mesh_for(skel)
    R = np.broadcast_to(np.eye(3), (1, 24, 3, 3))
    verts = pose_mesh_batch(mesh, *fk_batch(skel, R, np.array([[0.0, 5.0, 0.95]])))[0]
    verts = np.ascontiguousarray(verts)
    origin = np.array([0.0, 0.0, 1.0])
    dirs = rng.normal(size=(400, 3)) * [0.1, 1.0, 0.1] + [0.0, 1.0, 0.0]
    dirs = np.ascontiguousarray(dirs / np.linalg.norm(dirs, axis=1, keepdims=True))
    ta, fa = core.ray_cast(origin, dirs, verts, mesh.triangles, 100.0)
    tb, fb = _fallback.ray_cast(origin, dirs, verts, mesh.triangles, 100.0)
    assert (fa >= 0).sum() > 20
    assert np.array_equal(fa, fb)
    hit = fa >= 0
    assert np.abs(ta[hit] - tb[hit]).max() < 1e-12


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_maxpool_scatter_backends_agree(dtype):
    rng = np.random.default_rng(3)
    F, P, C, K = 4, 9, 5, 6
    idx = rng.integers(0, P, size=(F, K)).astype(np.int64)
    g = rng.normal(size=(F, K)).astype(dtype)
    g[0, 1] = 0.0
    w = rng.normal(size=(C, K)).astype(dtype)
    a = core.maxpool_scatter(idx, g, w, P)
    b = _fallback.maxpool_scatter(idx, g, w, P)
    assert a.dtype == b.dtype == dtype
    assert np.array_equal(a, b)
