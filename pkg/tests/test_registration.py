import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from trackbench.core import RigidTransform, SimilarityTransform, Trajectory, matrix_to_quat
from trackbench.errors import DegenerateGeometryError, InputError
from trackbench.patterns import generate, robot_pattern
from trackbench.registration import (
    apply_tool_offset,
    compute_centroid,
    load_transform,
    pivot_calibrate,
    registration_residual,
    rigid_register,
    save_transform,
    similarity_register,
    transform_from_dict,
    transform_to_dict,
)


@pytest.fixture(scope="module")
def cube_a():
    return generate(robot_pattern("A")).positions


def _rot_err(R_est, R_true):
    return Rotation.from_matrix(R_est @ R_true.T).magnitude()


def test_centroid_examples():
    assert np.array_equal(compute_centroid([[0, 0, 0]]), [0, 0, 0])
    assert np.array_equal(compute_centroid([[1, 0, 0], [-1, 0, 0]]), [0, 0, 0])
    assert np.array_equal(compute_centroid([[1, 2, 3], [3, 2, 1]]), [2, 2, 2])
    with pytest.raises(InputError):
        compute_centroid(np.zeros((0, 3)))


def test_identity_registration(cube_a):
    T, diag = rigid_register(cube_a, cube_a)
    assert np.allclose(T.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(T.translation, 0, atol=1e-12)
    assert diag.rms_residual < 1e-12


def test_noise_free_round_trip(cube_a):
    rng = np.random.default_rng(11)
    R0 = Rotation.random(random_state=rng).as_matrix()
    t0 = rng.uniform(-1, 1, 3)
    T, _ = rigid_register(cube_a, cube_a @ R0.T + t0)
    assert _rot_err(T.rotation, R0) < 1e-9
    assert np.linalg.norm(T.translation - t0) < 1e-9


def test_noisy_registration_monte_carlo(cube_a):
    # 100-seed oracle on a 500-point path; observed 95th percentiles were
    # about 1.8 mrad and 0.07 mm, and the rms residual sits at
    # sigma * sqrt(3 (n - 2) / n).
    idx = np.linspace(0, len(cube_a) - 1, 500).round().astype(int)
    A = cube_a[idx]
    sigma = 5e-4
    rot, tr, rms = [], [], []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        R0 = Rotation.random(random_state=rng).as_matrix()
        t0 = rng.uniform(-2, 2, 3)
        B = A @ R0.T + t0 + rng.normal(scale=sigma, size=A.shape)
        T, diag = rigid_register(A, B)
        rot.append(_rot_err(T.rotation, R0))
        tr.append(np.linalg.norm(T.translation - t0))
        rms.append(diag.rms_residual)
    assert np.sum(np.array(rot) < 5e-3) >= 95
    assert np.sum(np.array(tr) < 2e-4) >= 95
    expected = sigma * np.sqrt(3 * (len(A) - 2) / len(A))
    assert np.median(rms) == pytest.approx(expected, rel=0.05)


def test_reflection_is_corrected():
    # A mirror image of a planar set: the best orthogonal fit is a
    # reflection, which must never be returned.
    rng = np.random.default_rng(2)
    A = np.column_stack([rng.normal(size=(30, 2)), np.zeros(30)])
    B = A * [1, 1, -1] + [0, 0, 0]
    B[:, 0] *= -1
    T, diag = rigid_register(A, B)
    assert np.linalg.det(T.rotation) == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(T.rotation.T @ T.rotation, np.eye(3), atol=1e-9)


def test_planar_set_is_accepted(cube_a):
    A = cube_a.copy()
    A[:, 2] = 0.0
    R0 = Rotation.from_euler("xyz", [10, 20, 30], degrees=True).as_matrix()
    T, _ = rigid_register(A, A @ R0.T)
    assert _rot_err(T.rotation, R0) < 1e-9


@pytest.mark.parametrize(
    "A",
    [
        np.zeros((5, 3)),
        np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)]),
        np.eye(3)[:2],
    ],
    ids=["coincident", "collinear", "two-points"],
)
def test_degenerate_sets_rejected(A):
    with pytest.raises(DegenerateGeometryError, match="singular value|at least 3"):
        rigid_register(A, A)


def test_size_mismatch():
    with pytest.raises(InputError):
        rigid_register(np.eye(3), np.eye(4)[:, :3])


@pytest.mark.parametrize("s", [0.9, 0.95, 1.0, 1.05, 1.1])
def test_similarity_recovers_scale(cube_a, s):
    T, _ = similarity_register(cube_a, s * cube_a)
    assert T.scale == pytest.approx(s, abs=1e-9)
    assert np.allclose(T.rotation, np.eye(3), atol=1e-9)


def test_similarity_full_round_trip(cube_a):
    R0 = Rotation.from_euler("zyx", [40, -15, 70], degrees=True).as_matrix()
    t0 = np.array([0.3, -1.2, 2.0])
    T, _ = similarity_register(cube_a, 0.9 * cube_a @ R0.T + t0)
    assert T.scale == pytest.approx(0.9, abs=1e-9)
    assert _rot_err(T.rotation, R0) < 1e-9
    assert np.allclose(T.translation, t0, atol=1e-9)


def test_similarity_fixed_scale(cube_a):
    T, _ = similarity_register(cube_a, cube_a, fixed_scale=1.0)
    assert T.scale == 1.0


def _pivot_poses(n, offset, center, max_angle, rng):
    rv = rng.normal(size=(n, 3))
    rv *= (rng.uniform(0, max_angle, n) / np.linalg.norm(rv, axis=1))[:, None]
    Rs = Rotation.from_rotvec(rv).as_matrix()
    return Rs, center - Rs @ offset


def test_pivot_noise_free():
    rng = np.random.default_rng(5)
    p0 = np.array([0.0, 0.0, -0.02])
    Rs, ts = _pivot_poses(40, p0, np.array([0.4, 0.1, 0.9]), np.pi / 4, rng)
    res = pivot_calibrate(Rs, ts)
    assert np.linalg.norm(res.tool_offset - p0) < 1e-10
    assert res.rms_residual < 1e-10
    assert np.allclose(res.pivot_point, [0.4, 0.1, 0.9], atol=1e-10)


def test_pivot_pure_translation_is_degenerate():
    Rs = np.tile(np.eye(3), (10, 1, 1))
    ts = np.random.default_rng(0).normal(size=(10, 3))
    with pytest.raises(DegenerateGeometryError):
        pivot_calibrate(Rs, ts)


def test_pivot_too_few_poses():
    with pytest.raises(InputError):
        pivot_calibrate(np.tile(np.eye(3), (2, 1, 1)), np.zeros((2, 3)))


def test_pivot_monte_carlo():
    # observed 95th percentile of the offset error: about 0.3 mm
    p0 = np.array([0.01, -0.02, 0.15])
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        Rs, ts = _pivot_poses(50, p0, rng.uniform(-1, 1, 3), np.pi / 4, rng)
        ts = ts + rng.normal(scale=3e-4, size=ts.shape)
        errs.append(np.linalg.norm(pivot_calibrate(Rs, ts).tool_offset - p0))
    assert np.sum(np.array(errs) < 1e-3) >= 95


def test_apply_tool_offset_moves_to_pivot():
    rng = np.random.default_rng(8)
    p0 = np.array([0.0, 0.02, 0.1])
    Rs, ts = _pivot_poses(10, p0, np.array([1.0, 2.0, 3.0]), 1.0, rng)
    q = np.array([matrix_to_quat(R) for R in Rs])
    tr = Trajectory(np.arange(10.0), ts, q)
    moved = apply_tool_offset(tr, p0)
    assert np.allclose(moved.positions, [1.0, 2.0, 3.0], atol=1e-12)


def test_residual_examples(cube_a):
    T = RigidTransform.identity()
    assert registration_residual(cube_a, cube_a, T).mean == 0.0
    st_ = registration_residual([[0, 0, 0]], [[0.003, 0.004, 0.0]], T)
    assert st_.mean == pytest.approx(5.0)
    assert st_.max == pytest.approx(5.0)


def test_residual_calibration_cube_noise(cube_a):
    # with sigma = 0.5 mm per axis the mean 3-D error is sigma * sqrt(8/pi)
    rng = np.random.default_rng(1)
    B = cube_a + rng.normal(scale=5e-4, size=cube_a.shape)
    T, _ = rigid_register(cube_a, B)
    st_ = registration_residual(cube_a, B, T)
    assert st_.mean == pytest.approx(0.5 * np.sqrt(8 / np.pi), rel=0.1)


def test_transform_json_round_trip(tmp_path, cube_a):
    rng = np.random.default_rng(9)
    R0 = Rotation.random(random_state=rng).as_matrix()
    T, diag = rigid_register(cube_a, cube_a @ R0.T + 0.1)
    path = tmp_path / "t.json"
    save_transform(path, T, diag, latency=0.01)
    back = load_transform(path)
    assert np.array_equal(back.rotation, T.rotation)
    assert np.array_equal(back.translation, T.translation)
    assert json.loads(path.read_text())["latency"] == 0.01

    S = SimilarityTransform(1.05, T)
    back = transform_from_dict(transform_to_dict(S))
    assert isinstance(back, SimilarityTransform) and back.scale == 1.05


def test_malformed_transform_document():
    with pytest.raises(InputError):
        transform_from_dict({"rotation": [1, 0, 0]})


def _adversarial(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 40))
    A = rng.normal(size=(n, 3))
    if seed % 2 == 0:
        A[:, 2] = 0.0  # planar
    M = np.diag([1.0, 1.0, -1.0])[rng.permutation(3)]
    B = A @ (Rotation.random(random_state=rng).as_matrix() @ M).T
    return A, B + rng.normal(scale=float(rng.choice([0.0, 1e-3, 1.0])), size=B.shape)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_rotation_always_proper(seed):
    A, B = _adversarial(seed)
    T, _ = rigid_register(A, B)
    assert abs(np.linalg.det(T.rotation) - 1.0) < 1e-9
    assert np.max(np.abs(T.rotation.T @ T.rotation - np.eye(3))) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 2.0))
def test_registration_is_optimal_among_perturbations(seed, s):
    # No small rotation perturbation of the solution fits better.
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(20, 3))
    B = s * A @ Rotation.random(random_state=rng).as_matrix().T + rng.normal(scale=0.1, size=A.shape)
    T, diag = rigid_register(A, B)
    for _ in range(5):
        dR = Rotation.from_rotvec(rng.normal(scale=1e-3, size=3)).as_matrix()
        R = dR @ T.rotation
        t = B.mean(0) - R @ A.mean(0)
        r = np.sqrt(np.mean(np.sum((A @ R.T + t - B) ** 2, axis=1)))
        assert r >= diag.rms_residual - 1e-12
