"""Skeleton, rotation representations, forward kinematics and the proxy body mesh.

Rotations are stored as 3x3 matrices internally and converted to the 6D
representation (first two matrix columns) at network and file boundaries.
All functions accept leading batch dimensions where it is natural to do so.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

N_JOINTS = 24
N_IMUS = 4
IMU_NAMES = ("lw", "rw", "la", "ra")


class RotationError(ValueError):
    """Raised for 6D inputs whose columns are zero or parallel."""


# ---------------------------------------------------------------------------
# rotations


def rot6d_to_matrix(r, eps=1e-8):
    """Gram-Schmidt a 6D vector ``(a1, a2)`` into a rotation matrix.

    ``r`` has shape ``(..., 6)``; returns ``(..., 3, 3)`` with columns
    ``b1, b2, b3``. Degenerate inputs raise :class:`RotationError`.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got shape {r.shape}")
    a1, a2 = r[..., 0:3], r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    n2 = np.linalg.norm(a2, axis=-1)
    if np.any(n1 <= eps) or np.any(n2 <= eps):
        raise RotationError("6D rotation has a (near-)zero column")
    cos = np.einsum("...i,...i->...", a1, a2) / (n1 * n2)
    if np.any(np.abs(cos) >= 1.0 - eps):
        raise RotationError("6D rotation has parallel columns")
    b1 = a1 / n1[..., None]
    u2 = a2 - np.einsum("...i,...i->...", b1, a2)[..., None] * b1
    b2 = u2 / np.linalg.norm(u2, axis=-1)[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(m):
    """First two columns of ``m`` as ``(..., 6)``."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def is_rotation(m, tol=1e-6):
    m = np.asarray(m, dtype=np.float64)
    eye = np.eye(3)
    ortho = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max() <= tol
    return bool(ortho and np.abs(np.linalg.det(m) - 1.0).max() <= tol)


def axis_angle_to_matrix(axis, angle):
    """Rodrigues' formula; ``axis`` need not be normalized."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def random_rotation(rng, size=None):
    """Haar-random rotation(s) from the QR decomposition of a Gaussian matrix."""
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    a = rng.standard_normal(shape + (3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]
    det = np.linalg.det(q)
    q[..., :, 2] *= det[..., None]
    return q


# ---------------------------------------------------------------------------
# skeleton


@dataclass(frozen=True)
class Capsule:
    bone: int
    p0: tuple
    p1: tuple
    radius: float


@dataclass(frozen=True, eq=False)
class Skeleton:
    parents: np.ndarray
    offsets: np.ndarray
    imu_joints: np.ndarray
    capsules: tuple = ()
    names: tuple = ()

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        imu = np.asarray(self.imu_joints, dtype=np.int64)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "imu_joints", imu)
        n = parents.shape[0]
        if parents[0] != -1:
            raise ValueError("root joint must have parent -1")
        if any(parents[j] < 0 or parents[j] >= j for j in range(1, n)):
            raise ValueError("parents must be topologically sorted (parent[j] < j)")
        if offsets.shape != (n, 3):
            raise ValueError(f"offsets must have shape ({n}, 3), got {offsets.shape}")
        if imu.shape != (N_IMUS,) or imu.min() < 0 or imu.max() >= n:
            raise ValueError("imu_joints must hold 4 valid joint indices")
        for c in self.capsules:
            if not 0 <= c.bone < n:
                raise ValueError(f"capsule bone {c.bone} out of range")

    @property
    def n_joints(self):
        return self.parents.shape[0]

    @classmethod
    def from_dict(cls, d):
        caps = tuple(
            Capsule(int(c["bone"]), tuple(c["p0"]), tuple(c["p1"]), float(c["radius"]))
            for c in d.get("capsules", [])
        )
        return cls(d["parents"], d["offsets"], d["imu_joints"], caps, tuple(d.get("names", ())))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = {
            "parents": self.parents.tolist(),
            "offsets": self.offsets.tolist(),
            "imu_joints": self.imu_joints.tolist(),
            "capsules": [
                {"bone": c.bone, "p0": list(c.p0), "p1": list(c.p1), "radius": c.radius}
                for c in self.capsules
            ],
        }
        if self.names:
            d["names"] = list(self.names)
        return d


@lru_cache(maxsize=None)
def default_skeleton() -> Skeleton:
    """The bundled 24-joint humanoid (SMPL joint tree, z-up, about 1.74 m)."""
    text = resources.files("lipmocap.data").joinpath("default_skeleton.json").read_text()
    return Skeleton.from_dict(json.loads(text))


def load_skeleton(ref=None) -> Skeleton:
    if ref in (None, "", "default"):
        return default_skeleton()
    return Skeleton.load(ref)


# ---------------------------------------------------------------------------
# forward kinematics


@dataclass
class PoseFrame:
    root_translation: np.ndarray
    local_rotations: np.ndarray  # (24, 3, 3)

    def __post_init__(self):
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        self.local_rotations = np.asarray(self.local_rotations, dtype=np.float64)


def fk_batch(skel: Skeleton, local_rots, root_trans=None):
    """Vectorized forward kinematics.

    ``local_rots`` is ``(..., J, 3, 3)``; ``root_trans`` is ``(..., 3)`` or None
    for zero translation. Returns ``(joints (..., J, 3), global_rots (..., J, 3, 3))``.
    """
    local_rots = np.asarray(local_rots, dtype=np.float64)
    batch = local_rots.shape[:-3]
    J = skel.n_joints
    glob = np.empty(batch + (J, 3, 3))
    pos = np.empty(batch + (J, 3))
    glob[..., 0, :, :] = local_rots[..., 0, :, :]
    pos[..., 0, :] = 0.0 if root_trans is None else np.asarray(root_trans, dtype=np.float64)
    for j in range(1, J):
        p = skel.parents[j]
        glob[..., j, :, :] = glob[..., p, :, :] @ local_rots[..., j, :, :]
        pos[..., j, :] = pos[..., p, :] + glob[..., p, :, :] @ skel.offsets[j]
    return pos, glob


def forward_kinematics(skel: Skeleton, pose: PoseFrame):
    """World joint positions (24, 3) and global rotations (24, 3, 3) of one frame."""
    return fk_batch(skel, pose.local_rotations, pose.root_translation)


def root_relative(joints_world):
    """Subtract the root joint; accepts ``(..., J, 3)`` or flat ``(..., 3J)``."""
    joints_world = np.asarray(joints_world, dtype=np.float64)
    flat = joints_world.shape[-1] != 3
    j = joints_world.reshape(joints_world.shape[:-1] + (-1, 3)) if flat else joints_world
    rel = j - j[..., :1, :]
    return rel.reshape(joints_world.shape) if flat else rel


# ---------------------------------------------------------------------------
# proxy mesh


@dataclass(frozen=True)
class ProxyMesh:
    vertices: np.ndarray  # (M, 3) in the frame of the attached bone
    bones: np.ndarray  # (M,)
    triangles: np.ndarray  # (F, 3)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]


def _capsule(p0, p1, radius, n_around=10, n_cap=3):
    """Vertices and triangles of a capsule from ``p0`` to ``p1``."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    w = axis / length if length > 1e-12 else np.array([0.0, 0.0, 1.0])
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(w, helper)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)

    phis = 2.0 * np.pi * np.arange(n_around) / n_around
    ring_dirs = np.cos(phis)[:, None] * u + np.sin(phis)[:, None] * v
    rings = []
    # bottom hemisphere rings (excluding pole), then top
    for k in range(1, n_cap + 1):
        a = -0.5 * np.pi + 0.5 * np.pi * k / n_cap
        rings.append(p0 + radius * (np.sin(a) * w + np.cos(a) * ring_dirs))
    for k in range(0, n_cap):
        a = 0.5 * np.pi * k / n_cap
        rings.append(p1 + radius * (np.sin(a) * w + np.cos(a) * ring_dirs))
    verts = [p0 - radius * w] + [r for ring in rings for r in ring] + [p1 + radius * w]
    verts = np.asarray(verts)

    tris = []
    n_rings = len(rings)
    ring_start = lambda i: 1 + i * n_around  # noqa: E731
    for i in range(n_around):
        tris.append((0, ring_start(0) + (i + 1) % n_around, ring_start(0) + i))
    for r in range(n_rings - 1):
        a0, b0 = ring_start(r), ring_start(r + 1)
        for i in range(n_around):
            i1 = (i + 1) % n_around
            tris.append((a0 + i, a0 + i1, b0 + i1))
            tris.append((a0 + i, b0 + i1, b0 + i))
    top = len(verts) - 1
    last = ring_start(n_rings - 1)
    for i in range(n_around):
        tris.append((top, last + i, last + (i + 1) % n_around))
    return verts, np.asarray(tris, dtype=np.int64)


def build_proxy_mesh(skel: Skeleton, n_around=10, n_cap=3) -> ProxyMesh:
    verts, bones, tris = [], [], []
    base = 0
    for c in skel.capsules:
        v, t = _capsule(c.p0, c.p1, c.radius, n_around, n_cap)
        verts.append(v)
        bones.append(np.full(v.shape[0], c.bone, dtype=np.int64))
        tris.append(t + base)
        base += v.shape[0]
    if not verts:
        return ProxyMesh(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.int64))
    return ProxyMesh(np.concatenate(verts), np.concatenate(bones), np.concatenate(tris))


@lru_cache(maxsize=8)
def proxy_mesh_for(skel: Skeleton) -> ProxyMesh:
    return build_proxy_mesh(skel)


def pose_proxy_mesh(skel: Skeleton, pose: PoseFrame, mesh: ProxyMesh | None = None):
    """Posed vertices ``(M, 3)``: each vertex rides rigidly on its bone."""
    mesh = proxy_mesh_for(skel) if mesh is None else mesh
    joints, rots = forward_kinematics(skel, pose)
    return pose_mesh_batch(mesh, joints, rots)


def pose_mesh_batch(mesh: ProxyMesh, joints, global_rots):
    """Posed vertices for FK results with arbitrary leading batch dims."""
    R = global_rots[..., mesh.bones, :, :]
    return joints[..., mesh.bones, :] + np.einsum("...mij,mj->...mi", R, mesh.vertices)
