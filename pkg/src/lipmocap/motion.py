"""Ground-truth motion sequences and a small procedural motion generator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import N_JOINTS, axis_angle_to_matrix, fk_batch


@dataclass
class MotionSequence:
    """Root translations ``(T, 3)`` and local joint rotations ``(T, 24, 3, 3)``."""

    trans: np.ndarray
    rotations: np.ndarray
    rate_hz: float = 10.0

    def __post_init__(self):
        self.trans = np.asarray(self.trans, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.trans.ndim != 2 or self.trans.shape[1] != 3:
            raise ValueError(f"trans must be (T, 3), got {self.trans.shape}")
        if self.rotations.shape != (self.trans.shape[0], N_JOINTS, 3, 3):
            raise ValueError(f"rotations must be (T, 24, 3, 3), got {self.rotations.shape}")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")

    def __len__(self):
        return self.trans.shape[0]

    @property
    def dt(self):
        return 1.0 / self.rate_hz

    def joints_world(self, skel):
        return fk_batch(skel, self.rotations, self.trans)[0]


def _rx(a):
    return axis_angle_to_matrix((1.0, 0.0, 0.0), a)


def _ry(a):
    return axis_angle_to_matrix((0.0, 1.0, 0.0), a)


def _rz(a):
    return axis_angle_to_matrix((0.0, 0.0, 1.0), a)


# joint indices of the default tree
_L_HIP, _R_HIP, _L_KNEE, _R_KNEE = 1, 2, 4, 5
_SPINE1, _SPINE2, _SPINE3, _NECK = 3, 6, 9, 12
_L_SHO, _R_SHO, _L_ELB, _R_ELB = 16, 17, 18, 19
_L_ANK, _R_ANK = 7, 8

MOTION_KINDS = ("walk", "wave", "squat", "jack")


def generate_motion(kind="walk", frames=64, rate_hz=10.0, start=(0.0, 8.0, 0.95),
                    heading=0.0, seed=0):
    """Procedural motion built from sinusoidal joint angles.

    ``start`` is the initial root position in the world (z-up) frame and
    ``heading`` a yaw in radians. ``seed`` perturbs phase and amplitude so that
    motions of the same kind differ.
    """
    if kind not in MOTION_KINDS:
        raise ValueError(f"unknown motion kind {kind!r}; choose from {MOTION_KINDS}")
    rng = np.random.default_rng(seed)
    phase0 = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.8, 1.2)
    freq = rng.uniform(0.45, 0.6)  # cycles per second
    t = np.arange(frames) / rate_hz
    ph = 2 * np.pi * freq * t + phase0

    rots = np.tile(np.eye(3), (frames, N_JOINTS, 1, 1))
    trans = np.tile(np.asarray(start, dtype=np.float64), (frames, 1))
    yaw = heading + 0.15 * np.sin(0.5 * ph)
    if kind == "walk":
        yaw = yaw + 0.5 * np.pi  # walk across the sensor's view, not into it

    # arms hang down from the T-pose rest by default
    arm_down = np.deg2rad(70.0)
    for i in range(frames):
        s, c = np.sin(ph[i]), np.cos(ph[i])
        rots[i, 0] = _rz(yaw[i])
        rots[i, _L_SHO] = _ry(arm_down)
        rots[i, _R_SHO] = _ry(-arm_down)
        if kind == "walk":
            rots[i, _L_HIP] = _rx(0.45 * amp * s)
            rots[i, _R_HIP] = _rx(-0.45 * amp * s)
            rots[i, _L_KNEE] = _rx(-0.5 * amp * max(0.0, -s))
            rots[i, _R_KNEE] = _rx(-0.5 * amp * max(0.0, s))
            rots[i, _L_SHO] = _ry(arm_down) @ _rz(0.4 * amp * s)
            rots[i, _R_SHO] = _ry(-arm_down) @ _rz(0.4 * amp * s)
            rots[i, _L_ELB] = _rz(0.3 + 0.2 * c)
            rots[i, _R_ELB] = _rz(-0.3 - 0.2 * c)
            rots[i, _SPINE2] = _rz(-0.1 * s)
        elif kind == "wave":
            rots[i, _R_SHO] = _ry(-0.2) @ _rx(-0.3)
            rots[i, _R_ELB] = _ry(-1.0 - 0.6 * amp * s)
            rots[i, _L_ELB] = _rz(0.2 * c)
            rots[i, _SPINE1] = _ry(0.1 * s)
            rots[i, _NECK] = _rz(0.3 * c)
        elif kind == "squat":
            depth = 0.5 * (1 - c) * amp
            rots[i, _L_HIP] = _rx(-1.0 * depth)
            rots[i, _R_HIP] = _rx(-1.0 * depth)
            rots[i, _L_KNEE] = _rx(1.8 * depth)
            rots[i, _R_KNEE] = _rx(1.8 * depth)
            rots[i, _L_ANK] = _rx(-0.8 * depth)
            rots[i, _R_ANK] = _rx(-0.8 * depth)
            rots[i, _L_SHO] = _ry(arm_down * (1 - depth)) @ _rz(-depth)
            rots[i, _R_SHO] = _ry(-arm_down * (1 - depth)) @ _rz(depth)
            rots[i, _SPINE1] = _rx(-0.3 * depth)
        elif kind == "jack":
            open_ = 0.5 * (1 - c) * amp
            rots[i, _L_HIP] = _ry(0.35 * open_)
            rots[i, _R_HIP] = _ry(-0.35 * open_)
            rots[i, _L_SHO] = _ry(arm_down * (1 - 1.6 * open_))
            rots[i, _R_SHO] = _ry(-arm_down * (1 - 1.6 * open_))
            rots[i, _SPINE3] = _rz(0.1 * s)

    if kind == "walk":
        speed = 0.8 * amp
        fwd = np.stack([np.sin(yaw), -np.cos(yaw), np.zeros_like(yaw)], axis=1)
        trans[1:] += np.cumsum(fwd[1:] * speed / rate_hz, axis=0)
        trans[:, 2] += 0.02 * np.cos(2 * ph)
    elif kind == "squat":
        trans[:, 2] -= 0.35 * 0.5 * (1 - np.cos(ph)) * amp
    elif kind == "jack":
        trans[:, 2] += 0.08 * np.abs(np.sin(ph))
    else:
        trans[:, 0] += 0.1 * np.sin(0.5 * ph)
    return MotionSequence(trans, rots, rate_hz)
