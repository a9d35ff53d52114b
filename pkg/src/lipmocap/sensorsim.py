"""Synthetic LiDAR scans and sparse-IMU readings from ground-truth motion.

The LiDAR is modelled as a spinning scanner: a uniform grid of
``channels x azimuth steps`` rays from the sensor origin, each returning the
nearest mesh hit with Gaussian range noise. IMUs read the FK global rotation
of their bone and the second difference of the bone's world position, so
accelerations are gravity-free by construction.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _kernels
from .kinematics import (N_IMUS, Skeleton, default_skeleton, fk_batch, matrix_to_rot6d,
                         pose_mesh_batch, proxy_mesh_for)
from .motion import MotionSequence
from .preprocess import cloud_mean

# RNG stream key for IMU orientation noise; LiDAR frames use (seed, t) with t < 2**32 - 1
IMU_NOISE_STREAM = 2**32 - 1


@dataclass
class LidarConfig:
    sensor_position: tuple = (0.0, 0.0, 1.0)
    channels: int = 64
    vertical_fov_deg: float = 45.0
    horizontal_resolution_deg: float = 0.35
    horizontal_fov_deg: float = 360.0
    azimuth_center_deg: float = 90.0  # +y
    max_range: float = 50.0
    range_noise: float = 0.01
    rate_hz: float = 10.0

    def __post_init__(self):
        self.sensor_position = tuple(float(v) for v in self.sensor_position)
        if len(self.sensor_position) != 3:
            raise ValueError("sensor_position needs 3 components")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.horizontal_resolution_deg <= 0:
            raise ValueError("horizontal resolution must be > 0")
        if self.range_noise < 0:
            raise ValueError("range noise must be >= 0")
        if self.rate_hz <= 0:
            raise ValueError("rate must be > 0")
        if self.max_range <= 0:
            raise ValueError("max range must be > 0")

    def elevations(self):
        if self.channels == 1:
            return np.zeros(1)
        half = 0.5 * self.vertical_fov_deg
        return np.deg2rad(np.linspace(-half, half, self.channels))

    def azimuths(self):
        """Azimuth of every horizontal step that lies inside the horizontal FOV."""
        n = int(round(360.0 / self.horizontal_resolution_deg))
        az = np.arange(n) * self.horizontal_resolution_deg
        if self.horizontal_fov_deg < 360.0:
            rel = (az - self.azimuth_center_deg + 180.0) % 360.0 - 180.0
            az = az[np.abs(rel) <= 0.5 * self.horizontal_fov_deg]
        return np.deg2rad(az)


@dataclass
class SceneConfig:
    lidar: LidarConfig = field(default_factory=LidarConfig)
    occluders: list = field(default_factory=list)
    seed: int = 0
    distance: float | None = None
    imu_rotation_noise_deg: float = 0.0

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        lidar = d.pop("lidar", {}) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        return cls(lidar=LidarConfig(**lidar), **d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["lidar"]["sensor_position"] = list(self.lidar.sensor_position)
        return d


@dataclass
class PointCloudFrame:
    t: int
    points: np.ndarray  # (N, 3)

    def __len__(self):
        return self.points.shape[0]


@dataclass
class ImuFrame:
    rotations: np.ndarray  # (4, 3, 3) world frame, order lw, rw, la, ra
    accelerations: np.ndarray  # (4, 3) free acceleration, world frame


def ray_directions(elev, azim):
    """Unit directions for every (channel, azimuth) pair, channel-major."""
    ce, se = np.cos(elev)[:, None], np.sin(elev)[:, None]
    ca, sa = np.cos(azim)[None, :], np.sin(azim)[None, :]
    d = np.stack(np.broadcast_arrays(ce * ca, ce * sa, se), axis=-1)
    return d.reshape(-1, 3)


def _candidate_rays(config: LidarConfig, vertices, margin_deg):
    """Rays of the scan pattern that can possibly reach the mesh.

    Restricts the grid to the angular bounding box of the vertices (plus a
    margin covering edge bulge between vertices) unless the mesh spans too wide
    an angle, in which case the full pattern is returned.
    """
    origin = np.asarray(config.sensor_position)
    elev, azim = config.elevations(), config.azimuths()
    rel = vertices - origin
    horiz = np.hypot(rel[:, 0], rel[:, 1])
    if horiz.min() < 1e-3:
        return ray_directions(elev, azim)
    v_az = np.arctan2(rel[:, 1], rel[:, 0])
    c_az = np.arctan2(np.sin(v_az).mean(), np.cos(v_az).mean())
    d_az = (v_az - c_az + np.pi) % (2 * np.pi) - np.pi
    if np.abs(d_az).max() > np.deg2rad(60.0):
        return ray_directions(elev, azim)
    m = np.deg2rad(margin_deg)
    v_el = np.arctan2(rel[:, 2], horiz)
    el_keep = elev[(elev >= v_el.min() - m) & (elev <= v_el.max() + m)]
    a_rel = (azim - c_az + np.pi) % (2 * np.pi) - np.pi
    az_keep = azim[(a_rel >= d_az.min() - m) & (a_rel <= d_az.max() + m)]
    return ray_directions(el_keep, az_keep)


def simulate_lidar_frame(vertices, triangles, config: LidarConfig, seed=0, t=0,
                         occluders=(), full_pattern=False) -> PointCloudFrame:
    """Scan a posed mesh; returns the person points in the world frame.

    ``occluders`` is a sequence of ``(vertices, triangles)`` static meshes. Rays
    whose nearest hit is an occluder return no person point. Noise is drawn from
    a per-frame stream seeded by ``(seed, t)`` so frames are independent of the
    order in which they are simulated.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if vertices.shape[0] == 0 or triangles.shape[0] == 0:
        return PointCloudFrame(t, np.zeros((0, 3)))
    origin = np.asarray(config.sensor_position, dtype=np.float64)
    n_person = triangles.shape[0]

    all_v, all_t, base = [vertices], [triangles], vertices.shape[0]
    for ov, ot in occluders:
        all_v.append(np.asarray(ov, dtype=np.float64))
        all_t.append(np.asarray(ot, dtype=np.int64) + base)
        base += all_v[-1].shape[0]
    scene_v = np.ascontiguousarray(np.concatenate(all_v))
    scene_t = np.ascontiguousarray(np.concatenate(all_t))

    if full_pattern:
        dirs = ray_directions(config.elevations(), config.azimuths())
    else:
        margin = config.horizontal_resolution_deg + 1.0
        dirs = _candidate_rays(config, vertices, margin)
    dirs = np.ascontiguousarray(dirs)
    dist, tri = _kernels.ray_cast(origin, dirs, scene_v, scene_t, float(config.max_range))
    hit = (tri >= 0) & (tri < n_person)
    dist, dirs = dist[hit], dirs[hit]

    rng = np.random.default_rng([int(seed), int(t)])
    if config.range_noise > 0:
        dist = dist + rng.normal(0.0, config.range_noise, size=dist.shape[0])
    keep = (dist > 0) & (dist <= config.max_range)
    points = origin + dist[keep, None] * dirs[keep]
    return PointCloudFrame(t, points)


def imu_signals(motion: MotionSequence, skel: Skeleton):
    """Bone orientations ``(T, 4, 3, 3)`` and free accelerations ``(T, 4, 3)``."""
    T = len(motion)
    if T < 3:
        raise ValueError(f"IMU synthesis needs at least 3 frames, got {T}")
    joints, glob = fk_batch(skel, motion.rotations, motion.trans)
    ids = skel.imu_joints
    rots = glob[:, ids]
    p = joints[:, ids]
    dt2 = motion.dt * motion.dt
    acc = np.empty_like(p)
    acc[1:-1] = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / dt2
    # one-sided second differences at the ends
    acc[0] = (p[2] - 2.0 * p[1] + p[0]) / dt2
    acc[-1] = (p[-1] - 2.0 * p[-2] + p[-3]) / dt2
    return rots, acc


def simulate_imu_frame(motion: MotionSequence, t, skel: Skeleton | None = None) -> ImuFrame:
    """IMU reading at frame ``t`` (central differences inside, one-sided at the ends)."""
    skel = default_skeleton() if skel is None else skel
    if not -len(motion) <= t < len(motion):
        raise IndexError(f"frame {t} out of range for sequence of {len(motion)}")
    rots, acc = imu_signals(motion, skel)
    return ImuFrame(rots[t], acc[t])


def _perturb_rotations(rots, sigma_deg, rng):
    from .kinematics import axis_angle_to_matrix

    out = rots.copy()
    for idx in np.ndindex(rots.shape[:-2]):
        axis = rng.standard_normal(3)
        angle = np.deg2rad(sigma_deg) * rng.standard_normal()
        out[idx] = axis_angle_to_matrix(axis, angle) @ rots[idx]
    return out


def apply_distance(scene: SceneConfig, motion: MotionSequence) -> LidarConfig:
    """Lidar config with the sensor placed ``scene.distance`` metres from the
    first-frame root, along the direction from the root toward the configured
    sensor position (horizontal plane; sensor height kept)."""
    lidar = scene.lidar
    if scene.distance is None:
        return lidar
    root = motion.trans[0]
    s = np.asarray(lidar.sensor_position)
    d = s[:2] - root[:2]
    n = np.linalg.norm(d)
    d = np.array([0.0, -1.0]) if n < 1e-9 else d / n
    pos = (root[0] + scene.distance * d[0], root[1] + scene.distance * d[1], s[2])
    kw = asdict(lidar)
    kw["sensor_position"] = pos
    return LidarConfig(**kw)


def load_mesh_file(path):
    """Minimal Wavefront OBJ reader (``v`` and triangular/polygon ``f`` records)."""
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


@dataclass
class SyntheticSequence:
    """Frame-synchronized LiDAR/IMU/ground-truth triplets."""

    rate_hz: float
    trans: np.ndarray  # (T, 3)
    pose6d: np.ndarray  # (T, 144)
    joints_world: np.ndarray  # (T, 72)
    points: list  # T arrays of (N_t, 3)
    imu: np.ndarray  # (T, 48)
    d_gt: np.ndarray  # (T, 3); NaN where the cloud is empty
    skeleton: str = "default"

    def __len__(self):
        return self.trans.shape[0]


def synthesize_sequence(motion: MotionSequence, scene: SceneConfig | None = None,
                        skel: Skeleton | None = None, seed=None) -> SyntheticSequence:
    from .preprocess import pack_imu

    scene = SceneConfig() if scene is None else scene
    skel = default_skeleton() if skel is None else skel
    seed = scene.seed if seed is None else seed
    lidar = apply_distance(scene, motion)
    mesh = proxy_mesh_for(skel)
    occluders = [load_mesh_file(p) for p in scene.occluders]

    joints, glob = fk_batch(skel, motion.rotations, motion.trans)
    verts = pose_mesh_batch(mesh, joints, glob)
    rots, acc = imu_signals(motion, skel)
    if scene.imu_rotation_noise_deg > 0:
        rots = _perturb_rotations(rots, scene.imu_rotation_noise_deg,
                                  np.random.default_rng([int(seed), IMU_NOISE_STREAM]))

    T = len(motion)
    points, imu, d_gt = [], np.empty((T, 12 * N_IMUS)), np.full((T, 3), np.nan)
    for t in range(T):
        cloud = simulate_lidar_frame(verts[t], mesh.triangles, lidar, seed, t, occluders)
        points.append(cloud.points)
        imu[t] = pack_imu(ImuFrame(rots[t], acc[t]))
        if len(cloud):
            d_gt[t] = compute_d_gt(joints[t, 0], cloud.points)
    return SyntheticSequence(
        rate_hz=motion.rate_hz,
        trans=motion.trans.copy(),
        pose6d=matrix_to_rot6d(motion.rotations).reshape(T, -1),
        joints_world=joints.reshape(T, -1),
        points=points,
        imu=imu,
        d_gt=d_gt,
    )


def compute_d_gt(root_world, raw_points):
    """Translation discrepancy: true root minus the raw cloud's arithmetic mean."""
    return np.asarray(root_world, dtype=np.float64) - cloud_mean(raw_points)
