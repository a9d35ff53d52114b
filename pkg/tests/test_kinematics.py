import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lipmocap.kinematics import (N_JOINTS, PoseFrame, RotationError, Skeleton, axis_angle_to_matrix,
                                 build_proxy_mesh, fk_batch, forward_kinematics, is_rotation,
                                 load_skeleton, matrix_to_rot6d, pose_proxy_mesh, random_rotation,
                                 rot6d_to_matrix, root_relative)

from oracles import fk_homogeneous

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_default_skeleton_shape(skel):
    assert skel.n_joints == N_JOINTS
    assert skel.parents.tolist()[:4] == [-1, 0, 0, 0]
    assert skel.imu_joints.tolist() == [20, 21, 7, 8]
    joints, _ = fk_batch(skel, np.broadcast_to(np.eye(3), (N_JOINTS, 3, 3)))
    height = joints[:, 2].max() - joints[:, 2].min()
    assert 1.4 < height < 1.9


def test_fk_matches_homogeneous_oracle(skel, rng):
    R = random_rotation(rng, (100, N_JOINTS))
    trans = rng.normal(size=(100, 3))
    pos, _ = fk_batch(skel, R, trans)
    for k in range(100):
        ref = fk_homogeneous(skel.parents, skel.offsets, R[k], trans[k])
        assert np.abs(pos[k] - ref).max() < 1e-9


def test_fk_root_global_equals_local(skel, rng):
    R = random_rotation(rng, (5, N_JOINTS))
    _, glob = fk_batch(skel, R)
    assert np.array_equal(glob[:, 0], R[:, 0])


def test_forward_kinematics_single_frame(skel, rng):
    R = random_rotation(rng, N_JOINTS)
    pose = PoseFrame(np.array([1.0, 2.0, 3.0]), R)
    pos, glob = forward_kinematics(skel, pose)
    assert pos.shape == (24, 3) and glob.shape == (24, 3, 3)
    assert np.array_equal(pos[0], [1.0, 2.0, 3.0])


def test_fk_invariant_under_6d_round_trip(skel, rng):
    R = random_rotation(rng, (20, N_JOINTS))
    R2 = rot6d_to_matrix(matrix_to_rot6d(R))
    a, _ = fk_batch(skel, R)
    b, _ = fk_batch(skel, R2)
    assert np.abs(a - b).max() < 1e-9


def test_root_relative_zero_root(rng):
    j = rng.normal(size=(7, 24, 3))
    assert np.all(root_relative(j)[:, 0] == 0)
    flat = root_relative(j.reshape(7, 72))
    assert flat.shape == (7, 72) and np.all(flat[:, :3] == 0)


def test_rotation_round_trip_1000(rng):
    R = random_rotation(rng, 1000)
    back = rot6d_to_matrix(matrix_to_rot6d(R))
    assert np.abs(back - R).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 6, elements=finite))
def test_gram_schmidt_always_orthonormal(r):
    try:
        R = rot6d_to_matrix(r)
    except RotationError:
        return
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_scaled_sheared_input_recovers_rotation(s1, s2, shear, seed):
    R = random_rotation(np.random.default_rng(seed))
    six = np.concatenate([s1 * R[:, 0], s2 * R[:, 1] + shear * R[:, 0]])
    assert np.abs(rot6d_to_matrix(six) - R).max() < 1e-9


@pytest.mark.parametrize("six", [np.zeros(6), [1, 0, 0, 0, 0, 0], [1, 2, 3, 2, 4, 6]])
def test_degenerate_6d_raises(six):
    with pytest.raises(RotationError):
        rot6d_to_matrix(np.asarray(six, dtype=float))


def test_axis_angle_and_is_rotation():
    R = axis_angle_to_matrix([0, 0, 2.0], np.pi / 2)
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0])
    assert is_rotation(R)
    assert not is_rotation(2 * R)


def test_skeleton_json_round_trip(skel, tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(skel.to_dict()))
    s2 = load_skeleton(str(p))
    assert np.array_equal(s2.parents, skel.parents)
    assert np.array_equal(s2.offsets, skel.offsets)
    assert s2.capsules == skel.capsules


@pytest.mark.parametrize("bad", [
    dict(parents=[0, 0], offsets=[[0, 0, 0]] * 2, imu_joints=[0, 1, 1, 1]),
    dict(parents=[-1, 1], offsets=[[0, 0, 0]] * 2, imu_joints=[0, 1, 1, 1]),
    dict(parents=[-1, 0], offsets=[[0, 0, 0]], imu_joints=[0, 1, 1, 1]),
    dict(parents=[-1, 0], offsets=[[0, 0, 0]] * 2, imu_joints=[0, 1, 5, 1]),
])
def test_skeleton_validation(bad):
    with pytest.raises(ValueError):
        Skeleton(**bad)


def test_proxy_mesh_size_and_rigidity(skel, rng):
    mesh = build_proxy_mesh(skel)
    assert 15 <= len(skel.capsules) <= 25
    assert 1000 <= mesh.n_vertices <= 2000
    assert mesh.triangles.max() < mesh.n_vertices
    # a global rigid motion of the root moves every vertex rigidly
    R = random_rotation(rng, N_JOINTS)
    base = pose_proxy_mesh(skel, PoseFrame(np.zeros(3), R), mesh)
    G = random_rotation(rng)
    R2 = R.copy()
    R2[0] = G @ R[0]
    moved = pose_proxy_mesh(skel, PoseFrame(np.array([1.0, 0, 0]), R2), mesh)
    assert np.abs(moved - (base @ G.T + [1.0, 0, 0])).max() < 1e-12
