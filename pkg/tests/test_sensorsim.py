import numpy as np
import pytest

from lipmocap.kinematics import N_JOINTS, fk_batch, pose_mesh_batch, proxy_mesh_for, random_rotation
from lipmocap.motion import MotionSequence, generate_motion
from lipmocap.preprocess import cloud_mean, unpack_imu
from lipmocap.sensorsim import (LidarConfig, SceneConfig, compute_d_gt, imu_signals, load_mesh_file,
                                simulate_imu_frame, simulate_lidar_frame, synthesize_sequence)


def closest_point_distance(p, a, b, c):
    """Distance from point ``p`` to triangles ``(a, b, c)`` (arrays of shape (M, 3)); Ericson's method."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = (ab * ap).sum(1), (ac * ap).sum(1)
    bp = p - b
    d3, d4 = (ab * bp).sum(1), (ac * bp).sum(1)
    cp = p - c
    d5, d6 = (ab * cp).sum(1), (ac * cp).sum(1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        q = a + ab * v[:, None] + ac * w[:, None]
        # vertex and edge regions
        cand = [a, b, c]
        for s, e in ((a, b), (a, c), (b, c)):
            se = e - s
            tt = np.clip(((p - s) * se).sum(1) / (se * se).sum(1), 0, 1)
            cand.append(s + se * tt[:, None])
        inside = (va >= 0) & (vb >= 0) & (vc >= 0)
        dist = np.min([np.linalg.norm(p - x, axis=1) for x in cand], axis=0)
        dist = np.where(inside, np.minimum(dist, np.linalg.norm(p - q, axis=1)), dist)
    return dist.min()


def _posed(skel, motion, t):
    mesh = proxy_mesh_for(skel)
    j, g = fk_batch(skel, motion.rotations[t], motion.trans[t])
    return pose_mesh_batch(mesh, j, g), mesh.triangles


def test_noiseless_points_lie_on_mesh(skel):
    motion = generate_motion("wave", 4, seed=1)
    cfg = LidarConfig(range_noise=0.0)
    v, tri = _posed(skel, motion, 2)
    pts = simulate_lidar_frame(v, tri, cfg).points
    assert len(pts) > 20
    a, b, c = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    worst = max(closest_point_distance(p, a, b, c) for p in pts)
    assert worst < 1e-9


def test_noisy_points_lie_on_pattern_rays(skel):
    motion = generate_motion("walk", 3, seed=2)
    cfg = LidarConfig()
    v, tri = _posed(skel, motion, 1)
    pts = simulate_lidar_frame(v, tri, cfg, seed=5, t=1).points
    rel = pts - np.asarray(cfg.sensor_position)
    d = rel / np.linalg.norm(rel, axis=1, keepdims=True)
    el = np.arcsin(d[:, 2])
    az = np.arctan2(d[:, 1], d[:, 0]) % (2 * np.pi)
    assert np.abs(el[:, None] - cfg.elevations()[None]).min(axis=1).max() < 1e-9
    grid = cfg.azimuths() % (2 * np.pi)
    assert np.abs(az[:, None] - grid[None]).min(axis=1).max() < 1e-9


def test_full_pattern_matches_pruned(skel):
    motion = generate_motion("squat", 3, seed=4)
    cfg = LidarConfig(channels=32, horizontal_resolution_deg=1.0)
    v, tri = _posed(skel, motion, 1)
    a = simulate_lidar_frame(v, tri, cfg, seed=1, t=0).points
    b = simulate_lidar_frame(v, tri, cfg, seed=1, t=0, full_pattern=True).points
    assert np.array_equal(a, b)


def test_point_count_decreases_with_distance():
    rng = np.random.default_rng(0)
    counts = {}
    for dist in (6.0, 12.0, 24.0):
        n = []
        for k in range(10):
            m = generate_motion(("walk", "wave", "squat", "jack")[k % 4], 3, seed=int(rng.integers(1 << 30)))
            seq = synthesize_sequence(m, SceneConfig(distance=dist, seed=k))
            n.append(len(seq.points[1]))
        counts[dist] = np.mean(n)
    assert counts[24.0] < counts[12.0] < counts[6.0]


def test_person_behind_sensor_is_not_seen(skel):
    motion = generate_motion("walk", 3, start=(0.0, -8.0, 0.95), seed=0)
    cfg = LidarConfig(horizontal_fov_deg=180.0)
    v, tri = _posed(skel, motion, 1)
    assert len(simulate_lidar_frame(v, tri, cfg).points) == 0
    assert len(simulate_lidar_frame(v, tri, LidarConfig()).points) > 0


def test_occluder_blocks_rays(skel, tmp_path):
    motion = generate_motion("walk", 3, seed=0)
    wall = tmp_path / "wall.obj"
    wall.write_text("v -3 4 -1\nv 3 4 -1\nv 3 4 4\nv -3 4 4\nf 1 2 3\nf 1 3 4\n")
    ov, ot = load_mesh_file(wall)
    assert ot.shape == (2, 3)
    v, tri = _posed(skel, motion, 1)
    assert len(simulate_lidar_frame(v, tri, LidarConfig(), occluders=[(ov, ot)]).points) == 0
    seq = synthesize_sequence(motion, SceneConfig(occluders=[str(wall)]))
    assert all(len(p) == 0 for p in seq.points)
    assert np.isnan(seq.d_gt).all()


def test_frames_are_order_independent(skel):
    motion = generate_motion("jack", 6, seed=3)
    seq = synthesize_sequence(motion, SceneConfig(seed=9))
    v, tri = _posed(skel, motion, 4)
    alone = simulate_lidar_frame(v, tri, LidarConfig(), seed=9, t=4).points
    assert np.array_equal(alone, seq.points[4])


def test_imu_orientations_equal_fk(skel):
    motion = generate_motion("wave", 8, seed=1)
    rots, _ = imu_signals(motion, skel)
    _, glob = fk_batch(skel, motion.rotations, motion.trans)
    assert np.abs(rots - glob[:, skel.imu_joints]).max() < 1e-12
    fr = simulate_imu_frame(motion, 3, skel)
    assert np.array_equal(fr.rotations, rots[3])


def test_acceleration_exact_for_quadratic_trajectory(skel, rng):
    T = 9
    R = np.broadcast_to(random_rotation(rng, N_JOINTS), (T, N_JOINTS, 3, 3)).copy()
    t = np.arange(T) / 10.0
    acc = np.array([0.7, -1.3, 2.1])
    trans = np.array([0.5, 3.0, 1.0]) + np.outer(t, [0.2, 0.1, -0.3]) + 0.5 * np.outer(t * t, acc)
    _, a = imu_signals(MotionSequence(trans, R, 10.0), skel)
    assert np.abs(a - acc).max() < 1e-9


def test_imu_needs_three_frames(skel):
    m = generate_motion("walk", 2)
    with pytest.raises(ValueError):
        imu_signals(m, skel)


def test_synthesized_sequence_contents(short_seq, skel):
    s = short_seq
    T = len(s)
    assert s.pose6d.shape == (T, 144) and s.imu.shape == (T, 48) and s.joints_world.shape == (T, 72)
    assert np.array_equal(s.joints_world.reshape(T, 24, 3)[:, 0], s.trans)
    fr = unpack_imu(s.imu[5])
    assert fr.rotations.shape == (4, 3, 3)
    for t in range(T):
        assert np.abs(compute_d_gt(s.trans[t], s.points[t]) - s.d_gt[t]).max() <= 1e-12


def test_compute_d_gt_examples():
    cloud = np.array([[0.9, 2.0, 2.8], [0.9, 2.0, 2.8]])
    assert np.allclose(compute_d_gt([1, 2, 3], cloud), [0.1, 0.0, 0.2], atol=1e-12)
    cloud = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
    assert np.array_equal(compute_d_gt(cloud_mean(cloud), cloud), [0.0, 0.0, 0.0])


def test_scene_config_round_trip_and_rejects_unknown():
    sc = SceneConfig.from_dict({"lidar": {"channels": 16}, "seed": 4, "distance": 10.0})
    assert sc.lidar.channels == 16 and sc.seed == 4
    assert SceneConfig.from_dict(sc.to_dict()) == sc
    with pytest.raises((TypeError, ValueError)):
        SceneConfig.from_dict({"sed": 1})


def test_imu_rotation_noise_option():
    m = generate_motion("walk", 5, seed=1)
    clean = synthesize_sequence(m, SceneConfig(seed=1))
    noisy = synthesize_sequence(m, SceneConfig(seed=1, imu_rotation_noise_deg=2.0))
    diff = np.abs(clean.imu[:, :36] - noisy.imu[:, :36]).max()
    assert 1e-4 < diff < 0.2
    assert np.array_equal(clean.imu[:, 36:], noisy.imu[:, 36:])
