"""Pose, trajectory and transform types plus the primitives built on them.

All quantities are SI: seconds, meters, unit quaternions in (w, x, y, z)
order. Trajectories hold their data as read-only numpy arrays so they can be
shared freely; every operation here returns a new object.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

from trackbench.errors import FrameError, InputError, ValidationError

# Quaternions further than this from unit norm are renormalized on ingest.
# Anything closer is kept bit-for-bit so that serialization round trips.
_QUAT_RENORM_TOL = 1e-12
_ORTHO_TOL = 1e-9

IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def normalize_quaternions(q):
    """Return ``q`` (shape (..., 4)) scaled to unit norm.

    Rows already within 1e-12 of unit norm are returned untouched.
    """
    q = np.array(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValidationError("quaternion has non-finite components")
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("quaternion has zero norm")
    off = np.abs(norms - 1.0) > _QUAT_RENORM_TOL
    return np.where(off, q / norms, q)


def quat_multiply(a, b):
    """Hamilton product of (w, x, y, z) quaternions, broadcasting over rows."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def matrix_to_quat(R):
    """Rotation matrix (3, 3) to a (w, x, y, z) quaternion with w >= 0."""
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    q = np.array([w, x, y, z])
    return q if w >= 0 else -q


def quat_to_matrix(q):
    """(w, x, y, z) quaternion(s) to rotation matrices, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=float)
    return Rotation.from_quat(q[..., [1, 2, 3, 0]]).as_matrix()


@dataclass(frozen=True)
class PoseSample:
    """A single time-stamped pose in a named frame."""

    t: float
    position: tuple
    orientation: tuple = IDENTITY_QUAT
    frame: str = "world"
    source: str = ""

    def __post_init__(self):
        t = float(self.t)
        p = np.asarray(self.position, dtype=float)
        if p.shape != (3,):
            raise ValidationError(f"position must have 3 components, got {p.shape}")
        if not (np.isfinite(t) and np.all(np.isfinite(p))):
            raise ValidationError("pose sample has non-finite time or position")
        q = normalize_quaternions(np.asarray(self.orientation, dtype=float).reshape(4))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "position", tuple(float(v) for v in p))
        object.__setattr__(self, "orientation", tuple(float(v) for v in q))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered poses of one tracked body, expressed in one frame.

    ``t`` has shape (n,), ``positions`` (n, 3) and ``orientations`` (n, 4).
    Timestamps must be strictly increasing. ``orientations`` defaults to the
    identity for every sample.
    """

    t: np.ndarray
    positions: np.ndarray
    orientations: Optional[np.ndarray] = None
    frame: str = "world"
    source: str = ""
    nominal_rate: Optional[float] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3) if len(t) else np.zeros((0, 3))
        if p.shape[0] != t.shape[0]:
            raise ValidationError(f"{t.shape[0]} timestamps but {p.shape[0]} positions")
        if self.orientations is None:
            q = np.tile(IDENTITY_QUAT, (len(t), 1))
        else:
            q = np.asarray(self.orientations, dtype=float).reshape(-1, 4)
            if q.shape[0] != t.shape[0]:
                raise ValidationError(f"{t.shape[0]} timestamps but {q.shape[0]} orientations")
            if len(q):
                q = normalize_quaternions(q)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
            raise ValidationError("trajectory has non-finite timestamps or positions")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            bad = int(np.argmin(np.diff(t) > 0)) + 1
            raise ValidationError(f"timestamps not strictly increasing at sample {bad}")
        if self.nominal_rate is not None and not self.nominal_rate > 0:
            raise ValidationError("nominal_rate must be positive")
        object.__setattr__(self, "t", _readonly(t))
        object.__setattr__(self, "positions", _readonly(p))
        object.__setattr__(self, "orientations", _readonly(q))

    @classmethod
    def from_samples(cls, samples: Sequence[PoseSample], frame=None, nominal_rate=None):
        samples = list(samples)
        if frame is None:
            if not samples:
                raise InputError("frame must be given for an empty trajectory")
            frame = samples[0].frame
        if any(s.frame != frame for s in samples):
            raise ValidationError(f"all samples must be in frame {frame!r}")
        source = samples[0].source if samples else ""
        return cls(
            t=[s.t for s in samples],
            positions=[s.position for s in samples],
            orientations=[s.orientation for s in samples] if samples else None,
            frame=frame,
            source=source,
            nominal_rate=nominal_rate,
        )

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> PoseSample:
        return PoseSample(self.t[i], self.positions[i], self.orientations[i], self.frame, self.source)

    @property
    def samples(self):
        return [self[i] for i in range(len(self))]

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    def rate(self):
        """``nominal_rate`` if set, else the reciprocal of the median period."""
        if self.nominal_rate is not None:
            return float(self.nominal_rate)
        if len(self) < 2:
            raise InputError("rate needs at least 2 samples")
        return 1.0 / float(np.median(np.diff(self.t)))

    def replace(self, **changes) -> "Trajectory":
        return dataclasses.replace(self, **changes)

    def equals(self, other: "Trajectory") -> bool:
        """Bitwise equality of data and metadata."""
        return (
            isinstance(other, Trajectory)
            and self.frame == other.frame
            and self.source == other.source
            and self.nominal_rate == other.nominal_rate
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.orientations, other.orientations)
        )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``p_to = rotation @ p_from + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    from_frame: str = "test"
    to_frame: str = "reference"

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise InputError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InputError("transform has non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            raise InputError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise InputError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls, from_frame="test", to_frame="reference"):
        return cls(np.eye(3), np.zeros(3), from_frame, to_frame)

    @property
    def scale(self):
        return 1.0

    @property
    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation, self.to_frame, self.from_frame)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``p_to = scale * rigid.rotation @ p_from + rigid.translation``."""

    scale: float
    rigid: RigidTransform

    def __post_init__(self):
        s = float(self.scale)
        if not (np.isfinite(s) and s > 0):
            raise InputError(f"scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "scale", s)

    rotation = property(lambda self: self.rigid.rotation)
    translation = property(lambda self: self.rigid.translation)
    from_frame = property(lambda self: self.rigid.from_frame)
    to_frame = property(lambda self: self.rigid.to_frame)

    def apply(self, points):
        return self.scale * (np.asarray(points, dtype=float) @ self.rotation.T) + self.translation

    def inverse(self) -> "SimilarityTransform":
        Rt = self.rotation.T
        rigid = RigidTransform(Rt, -(Rt @ self.translation) / self.scale, self.to_frame, self.from_frame)
        return SimilarityTransform(1.0 / self.scale, rigid)


Transform = Union[RigidTransform, SimilarityTransform]


def apply_transform(T: Transform, traj: Trajectory) -> Trajectory:
    """Map ``traj`` from ``T.from_frame`` into ``T.to_frame``.

    Positions become ``s * R @ p + t``; orientations are left-multiplied by
    ``R``. Timestamps are untouched.
    """
    if traj.frame != T.from_frame:
        raise FrameError(f"trajectory is in frame {traj.frame!r}, transform expects {T.from_frame!r}")
    q_R = matrix_to_quat(T.rotation)
    q = quat_multiply(q_R, traj.orientations) if len(traj) else traj.orientations
    return traj.replace(positions=T.apply(traj.positions), orientations=q, frame=T.to_frame)


def time_shift(traj: Trajectory, dt: float) -> Trajectory:
    """Add ``dt`` seconds to every timestamp."""
    return traj.replace(t=traj.t + dt)


def _nlerp(q0, q1, alpha):
    sign = np.where(np.sum(q0 * q1, axis=-1, keepdims=True) < 0, -1.0, 1.0)
    q = (1.0 - alpha)[:, None] * q0 + alpha[:, None] * sign * q1
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def resample_at(traj: Trajectory, query_times, max_gap: float = np.inf) -> Trajectory:
    """Interpolate ``traj`` at ``query_times``.

    Positions are interpolated linearly and orientations by normalized
    linear interpolation. Queries outside the trajectory's time span, or
    inside an interval between samples longer than ``max_gap``, are dropped;
    a query landing exactly on a sample returns that sample unchanged.
    """
    if len(traj) < 2:
        raise InputError("resample_at needs a trajectory with at least 2 samples")
    q_t = np.asarray(query_times, dtype=float).reshape(-1)
    if len(q_t) > 1 and np.any(np.diff(q_t) < 0):
        raise InputError("query_times must be sorted")
    t = traj.t
    inside = (q_t >= t[0]) & (q_t <= t[-1])
    q_t = q_t[inside]

    i = np.searchsorted(t, q_t, side="right") - 1
    exact = t[i] == q_t
    j = np.minimum(i + 1, len(t) - 1)
    keep = exact | (t[j] - t[i] <= max_gap)
    q_t, i, j, exact = q_t[keep], i[keep], j[keep], exact[keep]

    span = t[j] - t[i]
    alpha = np.where(exact, 0.0, (q_t - t[i]) / np.where(span > 0, span, 1.0))
    p0, p1 = traj.positions[i], traj.positions[j]
    pos = p0 + alpha[:, None] * (p1 - p0)
    pos[exact] = p0[exact]

    q0, q1 = traj.orientations[i], traj.orientations[j]
    quat = _nlerp(q0, q1, alpha) if len(q_t) else np.zeros((0, 4))
    quat[exact] = q0[exact]
    return Trajectory(q_t, pos, quat, traj.frame, traj.source, None)


def finite_difference_velocity(t, positions):
    """Central differences in the interior, one-sided at the two ends."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(positions, dtype=float)
    if len(t) < 2:
        raise InputError("velocity needs at least 2 samples")
    v = np.empty_like(p)
    v[1:-1] = (p[2:] - p[:-2]) / (t[2:] - t[:-2])[:, None]
    v[0] = (p[1] - p[0]) / (t[1] - t[0])
    v[-1] = (p[-1] - p[-2]) / (t[-1] - t[-2])
    return v


def concatenate(trajectories: Sequence[Trajectory], gap: float = 0.0) -> Trajectory:
    """Join trajectories end to end in time.

    Each piece is shifted so it starts ``gap`` seconds (or one median sample
    period when ``gap`` is 0) after the previous one ends.
    """
    trajectories = [tr for tr in trajectories if len(tr)]
    if not trajectories:
        raise InputError("nothing to concatenate")
    first = trajectories[0]
    ts, ps, qs = [first.t], [first.positions], [first.orientations]
    end = first.t[-1]
    for tr in trajectories[1:]:
        if tr.frame != first.frame:
            raise FrameError("cannot concatenate trajectories in different frames")
        step = gap if gap > 0 else (1.0 / tr.rate() if len(tr) > 1 else 1e-3)
        shift = end + step - tr.t[0]
        ts.append(tr.t + shift)
        ps.append(tr.positions)
        qs.append(tr.orientations)
        end = ts[-1][-1]
    return Trajectory(np.concatenate(ts), np.vstack(ps), np.vstack(qs), first.frame, first.source, first.nominal_rate)
