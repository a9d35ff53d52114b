"""Differentiable 6D-to-matrix conversion and forward kinematics on the tape."""
from __future__ import annotations

import numpy as np

from . import core as T

GUARD = 1e-8


def _guard(v, fallback):
    """Add ``GUARD * fallback`` to rows of ``v`` whose norm is below ``GUARD``."""
    n = np.linalg.norm(v.data, axis=-1, keepdims=True)
    small = n < GUARD
    if not small.any():
        return v
    return T.add(v, T.Tensor(np.where(small, GUARD * fallback, 0.0), dtype=v.dtype))


def rot6d_to_matrix_t(x):
    """Gram-Schmidt on a ``(..., 6)`` tensor; returns ``(..., 3, 3)`` with columns b1, b2, b3.

    Near-zero columns are nudged by ``1e-8`` along a fixed axis instead of
    raising, so a badly initialized network never produces NaNs.
    """
    if x.shape[-1] != 6:
        raise T.ShapeError(f"rot6d_to_matrix: expected trailing dim 6, got {x.shape}")
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])
    a1 = _guard(x[..., 0:3], e1)
    a2 = x[..., 3:6]
    b1 = T.div(a1, T.sqrt(T.tsum(T.mul(a1, a1), axis=-1, keepdims=True)))
    proj = T.tsum(T.mul(b1, a2), axis=-1, keepdims=True)
    u2 = T.sub(a2, T.mul(proj, b1))
    # a fallback direction orthogonal to b1 in case a2 is parallel to it
    alt = np.cross(b1.data, np.where(np.abs(b1.data[..., :1]) < 0.9, e1, e2))
    alt /= np.linalg.norm(alt, axis=-1, keepdims=True)
    u2 = _guard(u2, alt)
    b2 = T.div(u2, T.sqrt(T.tsum(T.mul(u2, u2), axis=-1, keepdims=True)))
    b3 = T.cross(b1, b2)
    return T.stack([b1, b2, b3], axis=-1)


def fk_t(skel, rotmats, root_trans=None):
    """Forward kinematics on ``(N, J, 3, 3)`` local rotations.

    Returns joint positions ``(N, J, 3)``; with ``root_trans`` None the root is
    at the origin, which makes the result root-relative.
    """
    N, J = rotmats.shape[0], rotmats.shape[1]
    if J != skel.n_joints:
        raise T.ShapeError(f"fk: skeleton has {skel.n_joints} joints, rotations have {J}")
    dtype = rotmats.dtype
    glob = [rotmats[:, 0]]
    zero = T.Tensor(np.zeros((N, 3), dtype=dtype))
    pos = [zero if root_trans is None else T.as_tensor(root_trans)]
    for j in range(1, J):
        p = int(skel.parents[j])
        glob.append(T.matmul(glob[p], rotmats[:, j]))
        off = T.Tensor(skel.offsets[j].reshape(3, 1), dtype=dtype)
        pos.append(T.add(pos[p], T.reshape(T.matmul(glob[p], off), (N, 3))))
    return T.stack(pos, axis=1)
