import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from trackbench.core import (
    PoseSample,
    RigidTransform,
    SimilarityTransform,
    Trajectory,
    apply_transform,
    concatenate,
    finite_difference_velocity,
    matrix_to_quat,
    normalize_quaternions,
    quat_multiply,
    quat_to_matrix,
    resample_at,
    time_shift,
)
from trackbench.errors import FrameError, InputError, ValidationError


def _line(n=5, frame="test"):
    t = np.arange(n) * 0.1
    return Trajectory(t, np.column_stack([t, 2 * t, -t]), frame=frame, source="s")


def test_pose_sample_normalizes_quaternion():
    s = PoseSample(0.0, (1, 2, 3), (2, 0, 0, 0), "world")
    assert np.allclose(s.orientation, [1, 0, 0, 0])
    assert abs(np.linalg.norm(s.orientation) - 1) < 1e-6


def test_pose_sample_rejects_non_finite():
    with pytest.raises(ValidationError):
        PoseSample(0.0, (np.nan, 0, 0))
    with pytest.raises(ValidationError):
        PoseSample(0.0, (0, 0, 0), (0, 0, 0, 0))


def test_trajectory_requires_increasing_time():
    with pytest.raises(ValidationError):
        Trajectory([0.0, 0.2, 0.1], np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        Trajectory([0.0, 0.0], np.zeros((2, 3)))


def test_trajectory_arrays_read_only():
    tr = _line()
    with pytest.raises(ValueError):
        tr.positions[0, 0] = 5.0


def test_trajectory_samples_round_trip():
    tr = _line()
    back = Trajectory.from_samples(tr.samples)
    assert back.equals(tr)
    assert tr[2].position[0] == pytest.approx(0.2)


def test_rate_uses_nominal_then_median():
    tr = _line()
    assert tr.rate() == pytest.approx(10.0)
    assert tr.replace(nominal_rate=120.0).rate() == 120.0


def test_identity_transform_leaves_trajectory_unchanged():
    tr = _line()
    out = apply_transform(RigidTransform.identity(), tr)
    assert np.array_equal(out.positions, tr.positions)
    assert np.array_equal(out.orientations, tr.orientations)
    assert out.frame == "reference"


def test_quarter_turn_about_z():
    R = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    T = RigidTransform(R, [1.0, 2.0, 3.0])
    assert np.allclose(T.apply([[1.0, 0.0, 0.0]]), [[1.0, 3.0, 3.0]], atol=0)
    # independent routine for the same product
    R2 = Rotation.from_euler("z", 90, degrees=True).as_matrix()
    assert np.allclose(R2 @ [1, 0, 0] + [1, 2, 3], [1, 3, 3], atol=1e-15)


def test_transform_inverse_round_trip():
    rng = np.random.default_rng(3)
    T = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
    tr = _line()
    back = apply_transform(T.inverse(), apply_transform(T, tr))
    assert np.max(np.abs(back.positions - tr.positions)) < 1e-12
    assert back.frame == "test"


def test_similarity_inverse():
    rng = np.random.default_rng(4)
    S = SimilarityTransform(0.9, RigidTransform(Rotation.random(random_state=rng).as_matrix(), [1, 2, 3]))
    p = rng.normal(size=(10, 3))
    assert np.allclose(S.inverse().apply(S.apply(p)), p, atol=1e-12)


def test_frame_mismatch_raises():
    with pytest.raises(FrameError):
        apply_transform(RigidTransform.identity(), _line(frame="vive"))


def test_rigid_transform_rejects_reflection():
    with pytest.raises(InputError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_orientation_composed_with_rotation():
    Rz = Rotation.from_euler("z", 30, degrees=True)
    T = RigidTransform(Rz.as_matrix(), np.zeros(3))
    q = matrix_to_quat(Rotation.from_euler("x", 10, degrees=True).as_matrix())
    tr = Trajectory([0.0], [[0, 0, 0]], [q], frame="test")
    out = apply_transform(T, tr)
    expected = Rz * Rotation.from_euler("x", 10, degrees=True)
    assert np.allclose(quat_to_matrix(out.orientations[0]), expected.as_matrix(), atol=1e-12)


def test_quaternion_helpers_agree_with_scipy():
    rng = np.random.default_rng(0)
    a, b = Rotation.random(2, random_state=rng)
    qa, qb = matrix_to_quat(a.as_matrix()), matrix_to_quat(b.as_matrix())
    q = quat_multiply(qa, qb)
    assert np.allclose(quat_to_matrix(q), (a * b).as_matrix(), atol=1e-12)


def test_normalize_keeps_unit_quaternions_bitwise():
    q = np.array([[1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.5, 0.5]])
    assert np.array_equal(normalize_quaternions(q), q)


def test_resample_knot_exact_and_midpoint():
    tr = Trajectory([0.0, 1.0], [[0, 0, 0], [1, 0, 0]])
    out = resample_at(tr, [0.0, 0.5, 1.0])
    assert np.array_equal(out.positions[0], [0, 0, 0])
    assert np.array_equal(out.positions[1], [0.5, 0, 0])
    assert np.array_equal(out.positions[2], [1, 0, 0])


def test_resample_drops_gap_and_outside():
    tr = Trajectory([0.0, 0.1, 2.1, 2.2], np.zeros((4, 3)))
    out = resample_at(tr, [-1.0, 0.05, 1.0, 2.15, 3.0], max_gap=0.5)
    assert np.array_equal(out.t, [0.05, 2.15])


def test_resample_needs_two_samples():
    with pytest.raises(InputError):
        resample_at(Trajectory([0.0], [[0, 0, 0]]), [0.0])


def test_resample_orientation_nlerp_midpoint():
    q0 = [1.0, 0, 0, 0]
    q1 = matrix_to_quat(Rotation.from_euler("z", 90, degrees=True).as_matrix())
    tr = Trajectory([0.0, 1.0], np.zeros((2, 3)), [q0, q1])
    mid = resample_at(tr, [0.5]).orientations[0]
    angle = Rotation.from_quat(mid[[1, 2, 3, 0]]).magnitude()
    assert angle == pytest.approx(np.pi / 4, abs=1e-12)


def test_time_shift():
    tr = _line()
    assert time_shift(tr, 0.0).equals(tr)
    assert time_shift(tr, 0.010).t[0] == tr.t[0] + 0.010
    back = time_shift(time_shift(tr, 0.013), -0.013)
    assert np.max(np.abs(back.t - tr.t)) < 1e-15


def test_finite_difference_velocity_linear():
    t = np.linspace(0, 1, 11)
    p = np.column_stack([0.1 * t, np.zeros_like(t), np.zeros_like(t)])
    v = finite_difference_velocity(t, p)
    assert np.allclose(v[:, 0], 0.1, atol=1e-12)


def test_concatenate_shifts_later_pieces():
    a, b = _line(3), _line(3)
    c = concatenate([a, b], gap=0.5)
    assert len(c) == 6
    assert np.all(np.diff(c.t) > 0)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.integers(0, 2**32 - 1),
)
def test_transform_inverse_property(t, seed):
    R = Rotation.random(random_state=np.random.default_rng(seed)).as_matrix()
    T = RigidTransform(R, t)
    p = np.random.default_rng(seed).uniform(-5, 5, (20, 3))
    assert np.allclose(T.inverse().apply(T.apply(p)), p, atol=1e-11)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=30))
def test_resample_stays_within_segment_bounds(steps):
    t = np.cumsum(steps)
    p = np.column_stack([np.sin(t), np.cos(t), t])
    tr = Trajectory(t, p)
    q = np.linspace(t[0], t[-1], 17)
    out = resample_at(tr, q)
    assert len(out) == len(q)
    assert np.all(out.positions.min(axis=0) >= p.min(axis=0) - 1e-12)
    assert np.all(out.positions.max(axis=0) <= p.max(axis=0) + 1e-12)
