import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lipmocap.preprocess import (IMU_DIM, X3_DIM, X4_DIM, EmptyFrameError, build_stage2_inputs,
                                 cloud_mean, farthest_point_sample, normalize_cloud, pack_imu,
                                 unpack_imu, window_sequence)
from lipmocap.sensorsim import ImuFrame

from oracles import greedy_fps


def test_fps_matches_brute_force_oracle():
    rng = np.random.default_rng(7)
    for trial in range(200):
        N = int(rng.integers(1, 65))
        if trial % 2:
            # integer grid coordinates produce many equal distances
            pts = rng.integers(0, 3, size=(N, 3)).astype(float)
        else:
            pts = rng.normal(size=(N, 3))
        n = int(rng.integers(1, N + 1))
        start = int(rng.integers(0, N))
        got = farthest_point_sample(pts, n, start).tolist()
        assert got == greedy_fps(pts.tolist(), n, start), (trial, N, n)


def test_fps_tie_goes_to_lowest_index():
    pts = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0]], dtype=float)
    assert farthest_point_sample(pts, 2).tolist() == [0, 1]


def test_fps_cycles_when_short():
    pts = np.array([[0, 0, 0], [5, 0, 0], [1, 0, 0]], dtype=float)
    out = farthest_point_sample(pts, 8)
    assert out.tolist() == [0, 1, 2, 0, 1, 2, 0, 1]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)),
              elements=st.floats(-5, 5, allow_nan=False)), st.integers(1, 50))
def test_fps_deterministic_and_valid(pts, n):
    a = farthest_point_sample(pts, n)
    b = farthest_point_sample(pts.copy(), n)
    assert np.array_equal(a, b)
    assert len(a) == n and a.min() >= 0 and a.max() < len(pts)
    if n <= len(np.unique(pts, axis=0)):
        assert len(set(a.tolist())) == n


def test_fps_errors():
    with pytest.raises(ValueError):
        farthest_point_sample(np.zeros((0, 3)), 4)
    with pytest.raises(IndexError):
        farthest_point_sample(np.zeros((3, 3)), 2, start_index=3)


def test_centroid_is_sequential_mean(rng):
    pts = rng.normal(size=(1000, 3)) * 10 + 3
    ref = np.zeros(3)
    for p in pts:
        ref = ref + p
    ref = ref / len(pts)
    nc = normalize_cloud(pts)
    assert np.abs(nc.centroid - ref).max() <= 1e-12
    assert np.array_equal(cloud_mean(pts), nc.centroid)
    assert nc.points.shape == (256, 3)


def test_normalized_cloud_is_centered_on_raw_mean(rng):
    pts = rng.normal(size=(50, 3)) + [1, 8, 1]
    nc = normalize_cloud(pts)
    # sampled points are a (cycled) subset of the raw cloud shifted by its mean
    raw = {tuple(p) for p in (pts - nc.centroid).round(12)}
    assert all(tuple(p) in raw for p in nc.points.round(12))


def test_empty_frame_raises():
    with pytest.raises(EmptyFrameError) as e:
        normalize_cloud(np.zeros((0, 3)), t=7)
    assert e.value.t == 7


def test_imu_pack_round_trip(rng):
    fr = ImuFrame(rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3)))
    v = pack_imu(fr)
    assert v.shape == (IMU_DIM,)
    back = unpack_imu(v)
    assert np.array_equal(back.rotations, fr.rotations)
    assert np.array_equal(back.accelerations, fr.accelerations)
    assert np.array_equal(pack_imu(back), v)


def test_stage2_inputs_build_and_slice(rng):
    imu, jp, rr, jf = (rng.normal(size=(5, d)) for d in (48, 72, 6, 72))
    s = build_stage2_inputs(imu, jp, rr, jf)
    assert s.x3.shape == (5, X3_DIM) and s.x4.shape == (5, X4_DIM)
    assert np.array_equal(s.x3[:, :48], imu)
    assert np.array_equal(s.x3[:, 48:120], jp)
    assert np.array_equal(s.x3[:, 120:], rr)
    assert np.array_equal(s.x4[:, :126], s.x3)
    assert np.array_equal(s.x4[:, 126:], jf)
    with pytest.raises(ValueError):
        build_stage2_inputs(imu[:, :47], jp, rr)


def test_windowing():
    w = window_sequence(64, 32, 16)
    assert [x.start for x in w] == [0, 16, 32]
    assert all(x.mask.all() for x in w)
    assert window_sequence(20, 32, 16) == []
    inf = window_sequence(70, 32, 32, inference=True)
    assert [x.start for x in inf] == [0, 32, 64]
    last = inf[-1]
    assert last.mask.sum() == 6 and np.all(last.indices[6:] == 69)
    covered = np.concatenate([x.indices[x.mask] for x in inf])
    assert np.array_equal(covered, np.arange(70))
