import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipmocap import evalkit as E
from lipmocap.kinematics import (Skeleton, axis_angle_to_matrix, fk_batch, matrix_to_rot6d,
                                 random_rotation, root_relative)
from lipmocap.lipnet import PoseEstimate
from lipmocap.preprocess import cloud_mean

from oracles import chamfer_loop, mpjpe_loop, quat_angle_deg


def _poses(rng, n, j=24, scale=None):
    R = random_rotation(rng, size=(n, j))
    if scale is not None:
        # small perturbations of the identity keep bodies plausible
        R = np.stack([[axis_angle_to_matrix(rng.normal(size=3), scale * rng.normal())
                       for _ in range(j)] for _ in range(n)])
    return R


def gt_estimates(seq):
    """PoseEstimates that reproduce a sequence's ground truth exactly."""
    out = []
    for t in range(len(seq)):
        c = cloud_mean(seq.points[t]) if len(seq.points[t]) else np.zeros(3)
        d = seq.d_gt[t] if len(seq.points[t]) else np.zeros(3)
        out.append(PoseEstimate(t=t, j_prior=np.zeros(72), theta_root=np.zeros(6),
                                j_fine=np.zeros(72), theta=np.asarray(seq.pose6d[t]), d_hat=d,
                                centroid=c, translation=c + d,
                                joints_world=np.asarray(seq.joints_world[t]).reshape(-1),
                                flagged=len(seq.points[t]) == 0))
    return out


# ---------------------------------------------------------------------------
# MPJPE


def test_mpjpe_examples(rng):
    g = rng.normal(size=(5, 24, 3))
    assert E.mpjpe(g, g) == 0.0
    assert E.mpjpe(g + [0.01, 0.0, 0.0], g) == pytest.approx(10.0, abs=1e-9)


def test_mpjpe_matches_loop_oracle(rng):
    for _ in range(20):
        p, g = rng.normal(size=(4, 24, 3)), rng.normal(size=(4, 24, 3))
        assert abs(E.mpjpe(p, g) - mpjpe_loop(p, g)) < 1e-9


def test_mpjpe_rejects_shape_mismatch(rng):
    with pytest.raises(ValueError):
        E.mpjpe(rng.normal(size=(4, 24, 3)), rng.normal(size=(5, 24, 3)))


# ---------------------------------------------------------------------------
# mesh error


def test_mesh_err_identity_and_rigid_shift(skel, rng):
    R = _poses(rng, 3, scale=0.3)
    assert E.mesh_err(R, R, skel) == 0.0
    from lipmocap.kinematics import pose_mesh_batch, proxy_mesh_for

    joints, glob = fk_batch(skel, R)
    v = pose_mesh_batch(proxy_mesh_for(skel), joints, glob)
    shift = rng.normal(size=3)
    shift *= 0.005 / np.linalg.norm(shift)
    assert np.allclose(E.vertex_err(v + shift, v), 5.0, atol=1e-9)


def test_mesh_err_matches_loop_oracle(skel, rng):
    from lipmocap.kinematics import pose_mesh_batch, proxy_mesh_for

    mesh = proxy_mesh_for(skel)
    Ra, Rb = _poses(rng, 2, scale=0.4), _poses(rng, 2, scale=0.4)
    va = pose_mesh_batch(mesh, *fk_batch(skel, Ra))
    vb = pose_mesh_batch(mesh, *fk_batch(skel, Rb))
    expect = []
    for fa, fb in zip(va, vb):
        tot = 0.0
        for a, b in zip(fa, fb):
            tot += np.sqrt(sum((a[c] - b[c]) ** 2 for c in range(3)))
        expect.append(1000.0 * tot / len(fa))
    assert np.abs(E.per_frame_mesh_err(Ra, Rb, skel, mesh) - expect).max() < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_root_relative_metrics_invariant_to_global_motion(seed):
    from lipmocap.kinematics import default_skeleton

    skel = default_skeleton()
    rng = np.random.default_rng(seed)
    Ra, Rb = _poses(rng, 2, scale=0.5), _poses(rng, 2, scale=0.5)
    G = random_rotation(rng)
    tr = rng.normal(size=3) * 5
    ja, _ = fk_batch(skel, Ra)
    jb, _ = fk_batch(skel, Rb)
    Ra2, Rb2 = Ra.copy(), Rb.copy()
    Ra2[:, 0] = G @ Ra[:, 0]
    Rb2[:, 0] = G @ Rb[:, 0]
    ja2, _ = fk_batch(skel, Ra2, np.broadcast_to(tr, (2, 3)))
    jb2, _ = fk_batch(skel, Rb2, np.broadcast_to(tr, (2, 3)))
    assert E.mpjpe(root_relative(ja2), root_relative(jb2)) == pytest.approx(E.mpjpe(ja, jb), abs=1e-9)
    assert E.mesh_err(Ra2, Rb2, skel) == pytest.approx(E.mesh_err(Ra, Rb, skel), abs=1e-9)


# ---------------------------------------------------------------------------
# angular error


def _chain():
    return Skeleton(parents=[-1, 0, 1], offsets=[[0, 0, 0], [0, 1, 0], [0, 1, 0]], imu_joints=[0, 1, 2, 2])


def test_ang_err_propagates_along_chain(rng):
    chain = _chain()
    base = random_rotation(rng, size=(1, 3))
    axis = rng.normal(size=3)
    Rx = axis_angle_to_matrix(axis, np.pi / 2)
    root = base.copy()
    root[0, 0] = Rx @ base[0, 0]
    # the root's error reaches every descendant: all three joints are 90 degrees off
    assert E.ang_err(root, base, chain) == pytest.approx(90.0, abs=1e-9)
    mid = base.copy()
    mid[0, 1] = base[0, 1] @ Rx
    per_joint = E.geodesic_deg(fk_batch(chain, mid)[1], fk_batch(chain, base)[1])[0]
    assert np.allclose(per_joint, [0.0, 90.0, 90.0], atol=1e-9)
    assert E.ang_err(mid, base, chain) == pytest.approx(60.0, abs=1e-9)


def test_ang_err_matches_quaternion_oracle(rng):
    Ra, Rb = random_rotation(rng, size=500), random_rotation(rng, size=500)
    ours = E.geodesic_deg(Ra, Rb)
    ref = np.array([quat_angle_deg(a, b) for a, b in zip(Ra, Rb)])
    assert np.abs(ours - ref).max() < 1e-6


def test_ang_err_symmetric_and_zero_on_self(skel, rng):
    Ra, Rb = _poses(rng, 3), _poses(rng, 3)
    assert E.ang_err(Ra, Ra, skel) == 0.0
    assert E.ang_err(Ra, Rb, skel) == pytest.approx(E.ang_err(Rb, Ra, skel), abs=1e-10)
    assert E.ang_err(Ra, Rb, skel) > 0
    # 6D input gives the same value as matrices
    assert E.ang_err(matrix_to_rot6d(Ra).reshape(3, 144), Rb, skel) == pytest.approx(
        E.ang_err(Ra, Rb, skel), abs=1e-9)


def test_geodesic_exact_near_zero_and_pi():
    for ang in (1e-7, 1e-4, np.pi - 1e-6):
        R = axis_angle_to_matrix(np.array([0.3, -0.2, 0.9]), ang)
        assert E.geodesic_deg(R, np.eye(3)) == pytest.approx(np.degrees(ang), rel=1e-6)


# ---------------------------------------------------------------------------
# chamfer distance


def test_chamfer_examples(rng):
    v = rng.normal(size=(30, 3))
    assert E.chamfer_cd(v, v[[3, 7, 7, 20]]) == 0.0
    p = v[5] + np.array([0.0, 0.05, 0.0])
    far = np.concatenate([v[:5], v[6:]]) + [100.0, 0, 0]
    assert E.chamfer_cd(np.concatenate([far, v[5:6]]), p[None]) == pytest.approx(5.0, abs=1e-9)


def test_chamfer_matches_brute_force(rng):
    for _ in range(100):
        c = rng.normal(size=(rng.integers(1, 40), 3))
        v = rng.normal(size=(rng.integers(1, 60), 3))
        assert abs(E.chamfer_cd(v, c) - chamfer_loop(c, v)) < 1e-9
        sym = 0.5 * (chamfer_loop(c, v) + chamfer_loop(v, c))
        assert abs(E.chamfer_cd(v, c, symmetric=True) - sym) < 1e-9


def test_chamfer_rejects_empty(rng):
    with pytest.raises(ValueError):
        E.chamfer_cd(rng.normal(size=(4, 3)), np.zeros((0, 3)))


# ---------------------------------------------------------------------------
# trajectories and reports


def test_trajectory_offsets(short_seq, skel):
    est = gt_estimates(short_seq)
    cent = np.array([e.centroid for e in est])
    for e in est:
        e.d_hat = np.zeros(3)
    assert np.array_equal(E.assemble_trajectory(est, skel).root, cent)
    d = np.array([0.1, -0.2, 0.05])
    for e in est:
        e.d_hat = d
    assert np.allclose(E.assemble_trajectory(est, skel).root, cent + d, atol=1e-15)


def test_trajectory_interpolates_flagged_frames(short_seq, skel):
    est = gt_estimates(short_seq)
    est[4].flagged = True
    est[4].centroid = np.full(3, 99.0)
    traj = E.assemble_trajectory(est, skel)
    assert traj.flagged.tolist() == [t == 4 for t in range(len(est))]
    assert np.allclose(traj.root[4], 0.5 * (traj.root[3] + traj.root[5]), atol=1e-12)


def test_trajectory_reproduces_ground_truth_root(short_seq, skel):
    traj = E.assemble_trajectory(gt_estimates(short_seq), skel)
    assert np.abs(traj.root - np.asarray(short_seq.trans)).max() < 1e-12


def test_evaluate_self_comparison_and_report(short_seq, skel):
    rep = E.evaluate(gt_estimates(short_seq), short_seq, skel)
    assert rep.mpjpe_mm < 1e-9 and rep.mesh_err_mm < 1e-9 and rep.ang_err_deg < 1e-6
    assert rep.n_frames == len(short_seq)
    assert set(rep.to_dict()) >= {"mpjpe_mm", "mesh_err_mm", "ang_err_deg", "cd_cm"}
    lines = rep.to_csv().splitlines()
    assert lines[0] == "frame,mpjpe,mesh,ang,cd,flagged"
    assert len(lines) == len(short_seq) + 1


def test_evaluate_flags_empty_clouds(short_seq, skel):
    import copy

    seq = copy.deepcopy(short_seq)
    seq.points[2] = np.zeros((0, 3))
    rep = E.evaluate(gt_estimates(seq), seq, skel)
    assert rep.per_frame["cd"][2] is None and rep.flagged_frames == 1
    assert ",,1" in rep.to_csv().splitlines()[3]


def test_evaluate_length_mismatch(short_seq, skel):
    with pytest.raises(ValueError, match="length mismatch"):
        E.evaluate(gt_estimates(short_seq)[:-1], short_seq, skel)


def test_metrics_positive_on_mismatch(short_seq, skel, rng):
    est = gt_estimates(short_seq)
    est[0].theta = matrix_to_rot6d(random_rotation(rng, size=24)).reshape(-1)
    rep = E.evaluate(est, short_seq, skel)
    assert rep.mpjpe_mm > 0 and rep.mesh_err_mm > 0 and rep.ang_err_deg > 0
