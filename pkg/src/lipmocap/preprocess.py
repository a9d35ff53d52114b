"""Network input preparation: FPS resampling, centering, IMU packing, windowing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .kinematics import N_IMUS, N_JOINTS

N_FPS = 256
IMU_DIM = 12 * N_IMUS  # 48
X3_DIM = IMU_DIM + 3 * N_JOINTS + 6  # 126
X4_DIM = X3_DIM + 3 * N_JOINTS  # 198


class EmptyFrameError(ValueError):
    def __init__(self, t):
        super().__init__(f"frame {t}: point cloud is empty")
        self.t = t


def cloud_mean(points):
    """Arithmetic mean with a fixed sequential, ascending-index summation order.

    Summing along axis 0 of a C-ordered ``(N, 3)`` array accumulates row by row,
    so the result does not depend on numpy's pairwise-summation blocking.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise ValueError("mean of an empty point cloud")
    return np.add.reduce(points, axis=0) / points.shape[0]


def farthest_point_sample(points, n, start_index=0):
    """Greedy farthest point sampling; ties go to the lowest index.

    When the cloud has fewer than ``n`` points the full FPS ordering is
    repeated cyclically until ``n`` indices are produced.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    N = points.shape[0]
    if N == 0:
        raise ValueError("farthest point sampling on an empty point set")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= start_index < N:
        raise IndexError(f"start_index {start_index} out of range for {N} points")
    if N >= n:
        return _kernels.fps_indices(points, n, start_index)
    order = _kernels.fps_indices(points, N, start_index)
    return np.resize(order, n)


@dataclass
class NormalizedCloud:
    points: np.ndarray  # (256, 3), centered on the raw-cloud mean
    centroid: np.ndarray  # (3,)


def normalize_cloud(points, t=0, n=N_FPS) -> NormalizedCloud:
    """Resample the raw cloud to ``n`` points and subtract the raw-cloud mean.

    The centroid is the mean of all raw points, not of the sampled subset, so the
    sampled points need not average exactly to zero.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise EmptyFrameError(t)
    idx = farthest_point_sample(points, n, 0)
    centroid = cloud_mean(points)
    return NormalizedCloud(points[idx] - centroid, centroid)


def pack_imu(frame) -> np.ndarray:
    """``[R_lw, R_rw, R_la, R_ra (row-major 9 each), a_lw, a_rw, a_la, a_ra]``."""
    rots = np.asarray(frame.rotations, dtype=np.float64).reshape(N_IMUS, 9)
    acc = np.asarray(frame.accelerations, dtype=np.float64).reshape(N_IMUS, 3)
    return np.concatenate([rots.reshape(-1), acc.reshape(-1)])


def unpack_imu(vec):
    from .sensorsim import ImuFrame

    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape[-1] != IMU_DIM:
        raise ValueError(f"IMU pack must have {IMU_DIM} entries, got {vec.shape[-1]}")
    rots = vec[..., :36].reshape(vec.shape[:-1] + (N_IMUS, 3, 3))
    acc = vec[..., 36:].reshape(vec.shape[:-1] + (N_IMUS, 3))
    return ImuFrame(rots, acc)


@dataclass
class StageTwoInput:
    x3: np.ndarray
    x4: np.ndarray | None = None


def build_stage2_inputs(imu, j_prior, theta_root, j_fine=None) -> StageTwoInput:
    """Concatenate ``x3 = [imu, J_prior, Theta_root]`` and ``x4 = [x3, J_fine]``.

    Works on single frames or with shared leading dimensions.
    """
    imu, j_prior, theta_root = (np.asarray(a) for a in (imu, j_prior, theta_root))
    for name, a, d in (("imu", imu, IMU_DIM), ("j_prior", j_prior, 3 * N_JOINTS),
                       ("theta_root", theta_root, 6)):
        if a.shape[-1] != d:
            raise ValueError(f"{name} must have trailing dimension {d}, got {a.shape}")
    x3 = np.concatenate([imu, j_prior, theta_root], axis=-1)
    x4 = None
    if j_fine is not None:
        j_fine = np.asarray(j_fine)
        if j_fine.shape[-1] != 3 * N_JOINTS:
            raise ValueError(f"j_fine must have trailing dimension {3 * N_JOINTS}, got {j_fine.shape}")
        x4 = np.concatenate([x3, j_fine], axis=-1)
    return StageTwoInput(x3, x4)


@dataclass
class Window:
    start: int
    indices: np.ndarray  # (window,) frame indices, last frame repeated as padding
    mask: np.ndarray  # (window,) True for real frames


def window_sequence(n_frames, window=32, stride=16, inference=False):
    """Split ``n_frames`` into fixed-length windows.

    Training mode drops a trailing partial window. Inference mode keeps it,
    padding with the last frame and masking the padded slots.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    out = []
    start = 0
    while start + window <= n_frames:
        idx = np.arange(start, start + window)
        out.append(Window(start, idx, np.ones(window, dtype=bool)))
        start += stride
    if inference and n_frames > 0:
        covered = out[-1].start + window if out else 0
        if covered < n_frames:
            real = np.arange(start, n_frames)
            idx = np.concatenate([real, np.full(window - real.size, n_frames - 1)])
            mask = np.arange(window) < real.size
            out.append(Window(start, idx, mask))
    return out
