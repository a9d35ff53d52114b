"""Evaluation metrics (MPJPE, mesh error, angular error, chamfer distance) and trajectories.

Mesh error and chamfer distance are measured on the capsule proxy mesh, so
their absolute values are not comparable with numbers obtained on a skinned
SMPL surface.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ._kernels import nearest_sq_dist
from .kinematics import N_JOINTS, fk_batch, proxy_mesh_for, pose_mesh_batch, rot6d_to_matrix, root_relative


def _joints(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(a.shape[:-1] + (-1, 3)) if a.shape[-1] != 3 else a


def as_rotations(pose):
    """Accept ``(..., 144)``, ``(..., 24, 6)`` or ``(..., 24, 3, 3)``; return matrices."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape[-2:] == (3, 3):
        return pose
    if pose.shape[-1] == 6 * N_JOINTS:
        pose = pose.reshape(pose.shape[:-1] + (N_JOINTS, 6))
    if pose.shape[-1] != 6:
        raise ValueError(f"cannot interpret pose of shape {pose.shape}")
    return rot6d_to_matrix(pose)


def per_frame_mpjpe(pred, gt):
    """Mean joint distance per frame in mm; both inputs are already root-relative."""
    p, g = _joints(pred), _joints(gt)
    if p.shape != g.shape:
        raise ValueError(f"mpjpe: shapes differ {p.shape} vs {g.shape}")
    return np.linalg.norm(p - g, axis=-1).mean(axis=-1) * 1000.0


def mpjpe(pred, gt):
    """MPJPE in mm over all frames and joints of root-relative inputs."""
    return float(np.mean(per_frame_mpjpe(pred, gt)))


def _root_relative_mesh(pose, skel, mesh):
    joints, glob = fk_batch(skel, as_rotations(pose))
    return pose_mesh_batch(mesh, joints, glob)


def vertex_err(a, b):
    """Mean distance between corresponding vertices per frame, in mm."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mesh_err: vertex sets differ {a.shape} vs {b.shape}")
    return np.linalg.norm(a - b, axis=-1).mean(axis=-1) * 1000.0


def per_frame_mesh_err(pred_pose, gt_pose, skel, mesh=None):
    mesh = proxy_mesh_for(skel) if mesh is None else mesh
    return vertex_err(_root_relative_mesh(pred_pose, skel, mesh), _root_relative_mesh(gt_pose, skel, mesh))


def mesh_err(pred_pose, gt_pose, skel, mesh=None):
    """Mean root-relative proxy-mesh vertex distance in mm."""
    return float(np.mean(per_frame_mesh_err(pred_pose, gt_pose, skel, mesh)))


def geodesic_deg(Ra, Rb):
    """Angle of ``Ra Rb^T`` in degrees, elementwise over leading dims.

    Equal to ``arccos((tr - 1) / 2)`` but evaluated as ``atan2(sin, cos)`` with
    the sine from the skew part, which is accurate near 0 and 180 degrees.
    """
    M = Ra @ np.swapaxes(Rb, -1, -2)
    cos = np.clip((np.trace(M, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    w = np.stack([M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0],
                  M[..., 1, 0] - M[..., 0, 1]], axis=-1)
    return np.degrees(np.arctan2(0.5 * np.linalg.norm(w, axis=-1), cos))


def per_frame_ang_err(pred_pose, gt_pose, skel):
    _, ga = fk_batch(skel, as_rotations(pred_pose))
    _, gb = fk_batch(skel, as_rotations(gt_pose))
    return geodesic_deg(ga, gb).mean(axis=-1)


def ang_err(pred_pose, gt_pose, skel):
    """Mean global joint rotation error in degrees."""
    return float(np.mean(per_frame_ang_err(pred_pose, gt_pose, skel)))


def chamfer_cd(vertices, cloud, symmetric=False):
    """Mean distance from each cloud point to its nearest vertex, in cm.

    With ``symmetric`` the vertex-to-cloud direction is averaged in as well.
    """
    v = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
    c = np.ascontiguousarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(v) == 0 or len(c) == 0:
        raise ValueError("chamfer_cd: empty cloud or vertex set")
    d = np.sqrt(nearest_sq_dist(c, v)).mean()
    if symmetric:
        d = 0.5 * (d + np.sqrt(nearest_sq_dist(v, c)).mean())
    return float(d * 100.0)


@dataclass
class Trajectory:
    root: np.ndarray  # (T, 3)
    joints: np.ndarray  # (T, 24, 3)
    rotations: np.ndarray  # (T, 24, 3, 3) local
    flagged: np.ndarray  # (T,) bool

    @property
    def path_length(self):
        return float(np.linalg.norm(np.diff(self.root, axis=0), axis=-1).sum())


def _interp_flagged(values, flagged):
    out = values.copy()
    good = np.flatnonzero(~flagged)
    if len(good) == 0 or len(good) == len(values):
        return out
    t = np.arange(len(values))
    flat = out.reshape(len(values), -1)
    for k in range(flat.shape[1]):
        flat[flagged, k] = np.interp(t[flagged], good, flat[good, k])
    return flat.reshape(values.shape)


def assemble_trajectory(estimates, skel):
    """World root path ``centroid + D`` and world joints; flagged frames are interpolated."""
    cent = np.array([e.centroid for e in estimates], dtype=np.float64).reshape(-1, 3)
    d = np.array([e.d_hat for e in estimates], dtype=np.float64).reshape(-1, 3)
    flagged = np.array([e.flagged for e in estimates], dtype=bool)
    root = _interp_flagged(cent + d, flagged)
    from .lipnet import theta_to_matrices

    R = theta_to_matrices(np.array([e.theta for e in estimates]))
    joints, _ = fk_batch(skel, R, root)
    return Trajectory(root=root, joints=joints, rotations=R, flagged=flagged)


@dataclass
class MetricsReport:
    mpjpe_mm: float
    mesh_err_mm: float
    ang_err_deg: float
    cd_cm: float
    flagged_frames: int
    per_frame: dict = field(default_factory=dict)  # name -> list, one entry per frame
    cd_symmetric: bool = False

    @property
    def n_frames(self):
        return len(self.per_frame.get("mpjpe", []))

    def to_dict(self):
        return {"mpjpe_mm": self.mpjpe_mm, "mesh_err_mm": self.mesh_err_mm,
                "ang_err_deg": self.ang_err_deg, "cd_cm": self.cd_cm,
                "cd_symmetric": self.cd_symmetric, "flagged_frames": self.flagged_frames,
                "n_frames": self.n_frames, "per_frame": self.per_frame}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "mpjpe", "mesh", "ang", "cd", "flagged"])
        pf = self.per_frame
        for t in range(self.n_frames):
            cd = pf["cd"][t]
            w.writerow([t, repr(pf["mpjpe"][t]), repr(pf["mesh"][t]), repr(pf["ang"][t]),
                        "" if cd is None else repr(cd), int(pf["flagged"][t])])
        return buf.getvalue()


def evaluate(estimates, sequence, skel, symmetric_cd=False, mesh=None):
    """All four metrics for predicted estimates against a ground-truth sequence."""
    if len(estimates) != len(sequence):
        raise ValueError(f"length mismatch: {len(estimates)} predictions vs {len(sequence)} frames")
    mesh = proxy_mesh_for(skel) if mesh is None else mesh
    traj = assemble_trajectory(estimates, skel)
    pred_theta = traj.rotations
    gt_rot = as_rotations(np.asarray(sequence.pose6d))
    mp = per_frame_mpjpe(root_relative(traj.joints), root_relative(_joints(sequence.joints_world)))
    me = per_frame_mesh_err(pred_theta, gt_rot, skel, mesh)
    an = per_frame_ang_err(pred_theta, gt_rot, skel)
    _, glob = fk_batch(skel, pred_theta, traj.root)
    world_mesh = pose_mesh_batch(mesh, traj.joints, glob)
    cd, flagged = [], traj.flagged.copy()
    for t, pts in enumerate(sequence.points):
        if len(pts) == 0:
            cd.append(None)
            flagged[t] = True
        else:
            cd.append(chamfer_cd(world_mesh[t], pts, symmetric_cd))
    cds = [c for c in cd if c is not None]
    return MetricsReport(
        mpjpe_mm=float(mp.mean()), mesh_err_mm=float(me.mean()), ang_err_deg=float(an.mean()),
        cd_cm=float(np.mean(cds)) if cds else 0.0, flagged_frames=int(flagged.sum()),
        per_frame={"mpjpe": mp.tolist(), "mesh": me.tolist(), "ang": an.tolist(), "cd": cd,
                   "flagged": flagged.tolist()},
        cd_symmetric=bool(symmetric_cd))
