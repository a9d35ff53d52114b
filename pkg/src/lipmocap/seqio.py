"""JSON-Lines sequence and motion files, and PoseEstimate output files.

A sequence file starts with a header record, followed by one record per
frame. Floats are written with ``repr`` so a read -> write cycle reproduces
the file byte for byte. Motion files share the frame schema without the
sensor fields.
"""
from __future__ import annotations

import json

import numpy as np

from .kinematics import N_JOINTS, default_skeleton, load_skeleton, matrix_to_rot6d, rot6d_to_matrix
from .motion import MotionSequence
from .sensorsim import SyntheticSequence
from .tensorgrad.checkpoint import atomic_write_bytes

SEQ_FORMAT = "lipmocap.sequence"
MOTION_FORMAT = "lipmocap.motion"
POSES_FORMAT = "lipmocap.poses"
VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write_text(path, text):
    """Atomically write UTF-8 ``text`` (temp file + rename)."""
    atomic_write_bytes(path, text.encode("utf-8"))


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]


def _dumps(rec):
    return json.dumps(rec, separators=(",", ":"), allow_nan=False)


def _read_records(path, fmt):
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
    except OSError as e:
        raise FormatError(f"{path}: {e.strerror or e}") from None
    recs = []
    for no, ln in enumerate(lines, 1):
        if not ln.strip():
            continue
        try:
            recs.append(json.loads(ln))
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: line {no}: invalid JSON ({e.msg})") from None
    if not recs:
        raise FormatError(f"{path}: empty file")
    head = recs[0]
    if not isinstance(head, dict) or head.get("format") != fmt:
        raise FormatError(f"{path}: expected a {fmt} header record, got {str(head)[:80]}")
    if head.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {head.get('version')!r}")
    frames = recs[1:]
    if head.get("frame_count") != len(frames):
        raise FormatError(f"{path}: header says {head.get('frame_count')} frames, found {len(frames)}")
    for i, r in enumerate(frames):
        if r.get("t") != i:
            raise FormatError(f"{path}: frame record {i} has t={r.get('t')!r}")
    return head, frames


def _vec(rec, key, n, path):
    v = rec.get(key)
    if not isinstance(v, list) or len(v) != n:
        raise FormatError(f"{path}: frame {rec.get('t')}: field {key!r} must hold {n} floats")
    return v


# ---------------------------------------------------------------------------
# sequence files


def sequence_records(seq: SyntheticSequence):
    head = {"format": SEQ_FORMAT, "version": VERSION, "rate_hz": float(seq.rate_hz),
            "skeleton": seq.skeleton, "frame_count": len(seq)}
    yield head
    for t in range(len(seq)):
        d = seq.d_gt[t]
        yield {
            "t": t,
            "trans": _floats(seq.trans[t]),
            "pose6d": _floats(seq.pose6d[t]),
            "joints_world": _floats(seq.joints_world[t]),
            "points": [_floats(p) for p in np.asarray(seq.points[t]).reshape(-1, 3)],
            "imu": _floats(seq.imu[t]),
            "d_gt": None if np.isnan(d).any() else _floats(d),
        }


def dumps_sequence(seq: SyntheticSequence) -> str:
    return "".join(_dumps(r) + "\n" for r in sequence_records(seq))


def write_sequence(path, seq: SyntheticSequence):
    atomic_write_text(path, dumps_sequence(seq))


def read_sequence(path) -> SyntheticSequence:
    head, frames = _read_records(path, SEQ_FORMAT)
    T = len(frames)
    trans, pose, joints, imu = (np.empty((T, n)) for n in (3, 6 * N_JOINTS, 3 * N_JOINTS, 48))
    d_gt = np.full((T, 3), np.nan)
    points = []
    for t, r in enumerate(frames):
        trans[t] = _vec(r, "trans", 3, path)
        pose[t] = _vec(r, "pose6d", 6 * N_JOINTS, path)
        joints[t] = _vec(r, "joints_world", 3 * N_JOINTS, path)
        imu[t] = _vec(r, "imu", 48, path)
        pts = np.asarray(r.get("points", []), dtype=np.float64)
        if pts.size and (pts.ndim != 2 or pts.shape[1] != 3):
            raise FormatError(f"{path}: frame {t}: points must be N x 3")
        points.append(pts.reshape(-1, 3))
        if r.get("d_gt") is not None:
            d_gt[t] = _vec(r, "d_gt", 3, path)
    return SyntheticSequence(rate_hz=float(head["rate_hz"]), trans=trans, pose6d=pose,
                             joints_world=joints, points=points, imu=imu, d_gt=d_gt,
                             skeleton=head.get("skeleton", "default"))


# ---------------------------------------------------------------------------
# motion files


def motion_records(motion: MotionSequence, skeleton="default"):
    skel = default_skeleton() if skeleton == "default" else load_skeleton(skeleton)
    joints = motion.joints_world(skel)
    yield {"format": MOTION_FORMAT, "version": VERSION, "rate_hz": float(motion.rate_hz),
           "skeleton": skeleton, "frame_count": len(motion)}
    for t in range(len(motion)):
        yield {"t": t, "trans": _floats(motion.trans[t]),
               "pose6d": _floats(matrix_to_rot6d(motion.rotations[t])),
               "joints_world": _floats(joints[t])}


def write_motion(path, motion: MotionSequence, skeleton="default"):
    atomic_write_text(path, "".join(_dumps(r) + "\n" for r in motion_records(motion, skeleton)))


def read_motion(path):
    """Returns ``(MotionSequence, skeleton_ref)``; accepts motion or sequence files."""
    try:
        head, frames = _read_records(path, MOTION_FORMAT)
    except FormatError as first:
        try:
            head, frames = _read_records(path, SEQ_FORMAT)
        except FormatError:
            raise first from None
    T = len(frames)
    trans = np.empty((T, 3))
    rots = np.empty((T, N_JOINTS, 3, 3))
    for t, r in enumerate(frames):
        trans[t] = _vec(r, "trans", 3, path)
        six = np.asarray(_vec(r, "pose6d", 6 * N_JOINTS, path)).reshape(N_JOINTS, 6)
        try:
            rots[t] = rot6d_to_matrix(six)
        except ValueError as e:
            raise FormatError(f"{path}: frame {t}: {e}") from None
    return MotionSequence(trans, rots, rate_hz=float(head["rate_hz"])), head.get("skeleton", "default")


# ---------------------------------------------------------------------------
# pose estimate files


def write_poses(path, estimates, rate_hz=10.0):
    head = {"format": POSES_FORMAT, "version": VERSION, "rate_hz": float(rate_hz),
            "frame_count": len(estimates)}
    text = _dumps(head) + "\n" + "".join(_dumps(e.to_record()) + "\n" for e in estimates)
    atomic_write_text(path, text)


def read_poses(path):
    from .lipnet import PoseEstimate

    head, frames = _read_records(path, POSES_FORMAT)
    try:
        return [PoseEstimate.from_record(r) for r in frames]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: bad pose record ({e})") from None


# ---------------------------------------------------------------------------
# PLY export


def ply_text(points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(points)}", "property float x",
             "property float y", "property float z", "end_header"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in points.tolist()]
    return "\n".join(lines) + "\n"


def write_ply(path, points):
    atomic_write_text(path, ply_text(points))
