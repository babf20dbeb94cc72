"""Synthetic robot movement patterns and a seeded distortion injector.

Cube circuit
    The eight corners of an axis-aligned box (``origin`` is its center) are
    visited in reflected-Gray-code order of their (x, y, z) bits::

        000 -> 100 -> 110 -> 010 -> 011 -> 111 -> 101 -> 001 -> 000

    so every move runs along one box edge. Each edge uses a triangular speed
    profile: constant acceleration from rest to the peak at mid-edge and
    back to rest. Edge durations are rounded up to a whole number of sample
    periods so every corner is sampled exactly; the realized peak speed is
    therefore at most the requested one.

Circle
    Constant speed around a circle of the given diameter centered on
    ``origin`` in the chosen plane, starting on the first plane axis.

Random numbers come from ``numpy.random.default_rng(seed)`` (PCG64). The
distortion draws a unit direction (three standard normals, normalized) and
then the per-sample noise, always in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from trackbench.core import Trajectory, finite_difference_velocity, time_shift
from trackbench.errors import InputError

GRAY_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 1, 1], [1, 1, 1], [1, 0, 1], [0, 0, 1]],
    dtype=float,
)

_PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}

# Pattern sizes in meters: cube edge / circle diameter, or box extents.
PATTERN_SIZES = {"A": 0.05, "B": 0.10, "C": 0.20, "D": (0.80, 0.40, 0.20)}

# Robot placements of the displacement grid, offsets from the calibration
# center in meters.
DISPLACEMENT_GRID = (
    ("center", (0.0, 0.0, 0.0)),
    ("+50 [x]", (0.05, 0.0, 0.0)),
    ("-50 [x]", (-0.05, 0.0, 0.0)),
    ("-100 [x]", (-0.10, 0.0, 0.0)),
    ("+50 [z]", (0.0, 0.0, 0.05)),
    ("-50 [z]", (0.0, 0.0, -0.05)),
    ("+100 [z]", (0.0, 0.0, 0.10)),
)


@dataclass(frozen=True)
class PatternSpec:
    kind: str  # "cube-circuit" or "circle"
    size: object  # float, or (x, y, z) extents for a box circuit
    peak_speed: float
    rate: float = 120.0
    repetitions: int = 1
    origin: tuple = (0.0, 0.0, 0.0)
    plane: str = "xy"
    corners: Optional[tuple] = None  # box-corner fractions in [0, 1]^3
    frame: str = "reference"

    def __post_init__(self):
        if self.kind not in ("cube-circuit", "circle"):
            raise InputError(f"unknown pattern kind {self.kind!r}")
        size = np.atleast_1d(np.asarray(self.size, dtype=float))
        if size.shape not in ((1,), (3,)) or not np.all(size > 0):
            raise InputError("size must be a positive scalar or 3 positive extents")
        if self.kind == "circle" and size.shape != (1,):
            raise InputError("a circle takes a scalar diameter")
        if not (self.peak_speed > 0 and self.rate > 0 and self.repetitions >= 1):
            raise InputError("peak_speed and rate must be positive, repetitions >= 1")
        if self.plane not in _PLANES:
            raise InputError(f"plane must be one of {sorted(_PLANES)}")

    @property
    def extents(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.size, dtype=float), (3,)).copy()


def robot_pattern(letter: str, kind: str = "cube-circuit", average_speed: float = 0.1, rate: float = 120.0, **kw) -> PatternSpec:
    """Spec for one of the four robot patterns A-D.

    ``average_speed`` follows the convention of quoting average speeds: a
    cube circuit peaks at twice it, a circle runs at it. The circle of the
    box pattern D uses a 0.4 m diameter (the box's shorter footprint side).
    """
    letter = letter.upper()
    if letter not in PATTERN_SIZES:
        raise InputError(f"pattern must be one of A-D, got {letter!r}")
    size = PATTERN_SIZES[letter]
    if kind == "circle":
        if letter == "D":
            size = 0.40
        return PatternSpec("circle", size, average_speed, rate, **kw)
    return PatternSpec("cube-circuit", size, 2.0 * average_speed, rate, **kw)


def _cube_circuit(spec: PatternSpec):
    ext = spec.extents
    fractions = GRAY_CORNERS if spec.corners is None else np.asarray(spec.corners, dtype=float)
    corners = np.asarray(spec.origin, dtype=float) + (fractions - 0.5) * ext
    path = np.vstack([np.tile(corners, (spec.repetitions, 1)), corners[:1]])
    starts, ends = path[:-1], path[1:]
    lengths = np.linalg.norm(ends - starts, axis=1)
    # whole samples per edge, so each corner lands on a sample
    n_seg = np.maximum(np.ceil(2.0 * lengths / spec.peak_speed * spec.rate - 1e-9), 1).astype(int)
    seg_start = np.concatenate([[0], np.cumsum(n_seg)])
    n_total = seg_start[-1] + 1

    j = np.arange(n_total)
    seg = np.minimum(np.searchsorted(seg_start, j, side="right") - 1, len(n_seg) - 1)
    tau = (j - seg_start[seg]) / spec.rate
    T = n_seg[seg] / spec.rate
    L = lengths[seg]
    a = 4.0 * L / T**2
    s = np.where(tau <= T / 2, 0.5 * a * tau**2, L - 0.5 * a * (T - tau) ** 2)
    frac = np.divide(s, L, out=np.zeros_like(s), where=L > 0)
    pos = starts[seg] + frac[:, None] * (ends[seg] - starts[seg])
    pos[-1] = path[-1]
    return j / spec.rate, pos


def _circle(spec: PatternSpec):
    r = float(spec.size) / 2.0
    omega = spec.peak_speed / r
    total = spec.repetitions * 2.0 * np.pi / omega
    n = int(np.floor(total * spec.rate + 1e-9)) + 1
    t = np.arange(n) / spec.rate
    i, k = _PLANES[spec.plane]
    pos = np.tile(np.asarray(spec.origin, dtype=float), (n, 1))
    pos[:, i] += r * np.cos(omega * t)
    pos[:, k] += r * np.sin(omega * t)
    return t, pos


def generate(spec: PatternSpec) -> Trajectory:
    """Sample the pattern at ``spec.rate`` starting at t = 0."""
    t, pos = _cube_circuit(spec) if spec.kind == "cube-circuit" else _circle(spec)
    return Trajectory(t, pos, None, spec.frame, spec.kind, spec.rate)


def lap_time(spec: PatternSpec) -> float:
    """Duration of one circuit or one lap."""
    if spec.kind == "circle":
        return np.pi * float(spec.size) / spec.peak_speed
    return generate(replace(spec, repetitions=1)).duration


def generate_grid_sessions(base: PatternSpec, offsets: Sequence) -> list:
    """One trajectory per offset, with the pattern origin moved by it."""
    out = []
    for off in offsets:
        off = np.asarray(off, dtype=float)
        spec = replace(base, origin=tuple(np.asarray(base.origin, dtype=float) + off))
        out.append((tuple(off), generate(spec)))
    return out


@dataclass(frozen=True)
class DistortionModel:
    """Error mechanisms applied by :func:`distort`. All-default is the identity.

    ``radial_gain`` is in mm of error per meter of distance from ``center``
    beyond ``radial_deadband`` (0 makes it proportional to the distance) and
    ``speed_gain`` in mm per m/s of speed. ``radial_direction`` pins the
    radial error direction; by default it is drawn from the seed.
    """

    noise_sigma: float = 0.0
    scale: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    latency: float = 0.0
    radial_gain: float = 0.0
    radial_deadband: float = 0.0
    radial_direction: Optional[tuple] = None
    speed_gain: float = 0.0
    prediction_upsample: Optional[float] = None
    frame: Optional[str] = None

    def __post_init__(self):
        if self.noise_sigma < 0 or not self.scale > 0:
            raise InputError("noise_sigma must be >= 0 and scale > 0")
        if self.radial_deadband < 0:
            raise InputError("radial_deadband must be >= 0")
        if self.radial_direction is not None and not np.linalg.norm(self.radial_direction) > 0:
            raise InputError("radial_direction must be a non-zero vector")
        if self.prediction_upsample is not None and not self.prediction_upsample > 0:
            raise InputError("prediction_upsample must be a positive rate")


def distort(traj: Trajectory, model: DistortionModel, seed: int = 0) -> Trajectory:
    """Corrupt ``traj`` as a system under test would.

    Steps, in order: scale about ``center``; add
    ``radial_gain * max(0, |p - center| - radial_deadband)`` along one unit
    direction; add ``speed_gain * speed`` along the
    direction of travel; add isotropic Gaussian noise; delay by ``latency``;
    optionally re-emit at ``prediction_upsample`` Hz by linear prediction.
    Radial and speed magnitudes are taken from the undistorted motion.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=3)
    if model.radial_direction is not None:
        direction = np.asarray(model.radial_direction, dtype=float)
    direction = direction / np.linalg.norm(direction)

    c = np.asarray(model.center, dtype=float)
    p0 = traj.positions
    p = p0.copy()
    if model.scale != 1.0:
        p = c + model.scale * (p0 - c)
    if model.radial_gain:
        excess = np.maximum(np.linalg.norm(p0 - c, axis=1) - model.radial_deadband, 0.0)
        p = p + (model.radial_gain / 1000.0) * excess[:, None] * direction
    if model.speed_gain and len(traj) > 1:
        v = finite_difference_velocity(traj.t, p0)
        p = p + (model.speed_gain / 1000.0) * v
    if model.noise_sigma > 0:
        p = p + rng.normal(scale=model.noise_sigma, size=p.shape)

    out = traj.replace(positions=p, frame=model.frame or traj.frame)
    if model.latency:
        out = time_shift(out, model.latency)
    if model.prediction_upsample is not None:
        out = prediction_upsample(out, model.prediction_upsample)
    return out


def prediction_upsample(traj: Trajectory, target_rate: float) -> Trajectory:
    """Emit ``traj`` at ``target_rate`` by extrapolating between its samples.

    Every input sample is a knot. Between knots ``k`` and ``k + 1`` the output
    continues from knot ``k`` with the velocity of the previous knot interval;
    the first interval uses its own velocity. Orientation holds the knot's.
    """
    if len(traj) < 2:
        raise InputError("prediction upsampling needs at least 2 samples")
    tau, P = traj.t, traj.positions
    n = int(np.floor((tau[-1] - tau[0]) * target_rate + 1e-9)) + 1
    t = tau[0] + np.arange(n) / target_rate
    k = np.clip(np.searchsorted(tau, t, side="right") - 1, 0, len(tau) - 1)
    vel = np.empty_like(P)
    vel[1:] = (P[1:] - P[:-1]) / np.diff(tau)[:, None]
    vel[0] = vel[1]
    pos = P[k] + (t - tau[k])[:, None] * vel[k]
    return Trajectory(t, pos, traj.orientations[k], traj.frame, traj.source, target_rate)
