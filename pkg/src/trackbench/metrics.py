"""Error analysis between a reference and a system under test.

Errors are carried in millimeters, covariates in SI units. Error values are
never smoothed; only the speed covariate is.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from trackbench.core import Trajectory, finite_difference_velocity, resample_at
from trackbench.errors import InputError


@dataclass(frozen=True)
class SummaryStats:
    """One row of a results table. All values in millimeters.

    ``sd`` is the sample standard deviation (n - 1 denominator), defined as
    0 for a single value.
    """

    mean: float
    sd: float
    max: float
    n: int
    q1: float = float("nan")
    median: float = float("nan")
    q3: float = float("nan")

    def format_row(self) -> str:
        return f"{self.mean:.3f} / {self.sd:.3f} / {self.max:.1f}"

    def as_dict(self) -> dict:
        return {
            "mean_mm": self.mean,
            "sd_mm": self.sd,
            "max_mm": self.max,
            "n": self.n,
            "q1_mm": self.q1,
            "median_mm": self.median,
            "q3_mm": self.q3,
        }


@dataclass(frozen=True, eq=False)
class ErrorSeries:
    t: np.ndarray
    error: np.ndarray
    speed: Optional[np.ndarray] = None
    dist_to_center: Optional[np.ndarray] = None
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        e = np.asarray(self.error, dtype=float).reshape(-1)
        if t.shape != e.shape:
            raise InputError("t and error must have the same length")
        if np.any(e < 0):
            raise InputError("error values must be non-negative")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "error", e)
        for name in ("speed", "dist_to_center"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).reshape(-1)
                if v.shape != t.shape:
                    raise InputError(f"{name} must have the same length as t")
                object.__setattr__(self, name, v)
        object.__setattr__(self, "labels", dict(self.labels))

    def __len__(self):
        return len(self.t)

    def with_labels(self, **labels) -> "ErrorSeries":
        return replace(self, labels={**self.labels, **labels})


def absolute_error(pairs, center=None, speed_window: Optional[int] = 5) -> ErrorSeries:
    """Per-pair Euclidean distance between reference and test, in mm.

    ``pairs`` is a :class:`trackbench.sync.PairedSeries`. When
    ``speed_window`` is not None the reference speed is attached as a
    covariate; when ``center`` is given so is the reference point's distance
    to it.
    """
    if len(pairs) == 0:
        raise InputError("no pairs to compare")
    err = 1000.0 * np.linalg.norm(pairs.test_points - pairs.ref_points, axis=1)
    speed = None
    if speed_window is not None and len(pairs) >= 3:
        speed = _speed(pairs.t, pairs.ref_points, speed_window)
    dist = None
    if center is not None:
        dist = np.linalg.norm(pairs.ref_points - np.asarray(center, dtype=float), axis=1)
    return ErrorSeries(pairs.t, err, speed, dist)


def _moving_average(x, window):
    # Edge samples average over the part of the window that exists.
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, len(x))
    return (c[hi] - c[lo]) / (hi - lo)


def _speed(t, positions, window):
    if window < 1 or window % 2 == 0:
        raise InputError(f"speed window must be odd and >= 1, got {window}")
    s = np.linalg.norm(finite_difference_velocity(t, positions), axis=1)
    return s if window == 1 else _moving_average(s, window)


def speed_profile(traj: Trajectory, window: int = 5) -> np.ndarray:
    """Speed in m/s at every sample of ``traj``, smoothed over ``window``."""
    if len(traj) < 3:
        raise InputError(f"speed profile needs at least 3 samples, got {len(traj)}")
    return _speed(traj.t, traj.positions, window)


def distance_to_center(traj: Trajectory, center) -> np.ndarray:
    return np.linalg.norm(traj.positions - np.asarray(center, dtype=float), axis=1)


def relative_error(ref_a, ref_b, test_a, test_b, latency=0.0, max_gap=np.inf) -> ErrorSeries:
    """Error of the displacement of tracker ``a`` relative to tracker ``b``.

    At each (latency-corrected) timestamp of ``test_a`` the other three
    streams are interpolated and the error is
    ``|(test_a - test_b) - (ref_a - ref_b)|`` in mm. Any bias shared by both
    test trackers cancels.
    """
    times = test_a.t
    if len(times) == 0:
        raise InputError("test_a is empty")
    tb = _aligned(test_b, times, max_gap)
    ra = _aligned(ref_a, times - latency, max_gap)
    rb = _aligned(ref_b, times - latency, max_gap)
    ok = ~(np.isnan(tb[:, 0]) | np.isnan(ra[:, 0]) | np.isnan(rb[:, 0]))
    if not np.any(ok):
        raise InputError("the four streams do not overlap in time")
    d_test = test_a.positions[ok] - tb[ok]
    d_ref = ra[ok] - rb[ok]
    err = 1000.0 * np.linalg.norm(d_test - d_ref, axis=1)
    return ErrorSeries(times[ok] - latency, err)


def _aligned(traj, times, max_gap):
    # Positions at ``times``; NaN rows where resampling dropped the query.
    r = resample_at(traj, times, max_gap)
    out = np.full((len(times), 3), np.nan)
    out[np.searchsorted(times, r.t)] = r.positions
    return out


def descriptive_stats_values(values) -> SummaryStats:
    x = np.asarray(values, dtype=float).reshape(-1)
    if len(x) == 0:
        raise InputError("cannot summarize an empty series")
    sd = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return SummaryStats(float(np.mean(x)), sd, float(np.max(x)), len(x), float(q1), float(med), float(q3))


def descriptive_stats(series: ErrorSeries) -> SummaryStats:
    """Mean, sample SD, max (and quartiles) of the error values."""
    return descriptive_stats_values(series.error)


def group_stats(series: Sequence[ErrorSeries], key: str):
    """Pool series by the value of label ``key``.

    Returns ``[(label_value, SummaryStats), ...]`` sorted by label value.
    """
    groups = {}
    for i, s in enumerate(series):
        if key not in s.labels:
            raise InputError(f"series {i} has no label {key!r}")
        groups.setdefault(str(s.labels[key]), []).append(s.error)
    return [(label, descriptive_stats_values(np.concatenate(groups[label]))) for label in sorted(groups)]


STATS_HEADER = ("label", "mean_mm", "sd_mm", "max_mm", "n")


def stats_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for label, st in rows:
        w.writerow([label, repr(st.mean), repr(st.sd), repr(st.max), st.n])
    return buf.getvalue()


def stats_to_json(rows) -> list:
    return [{"label": label, **st.as_dict()} for label, st in rows]


COVARIATE_COLUMNS = ("t", "error_mm", "speed_mps", "dist_to_center_m")


def error_covariate_table(series: ErrorSeries) -> dict:
    """Column-aligned export; covariates that are absent are omitted."""
    cols = {"t": series.t, "error_mm": series.error}
    if series.speed is not None:
        cols["speed_mps"] = series.speed
    if series.dist_to_center is not None:
        cols["dist_to_center_m"] = series.dist_to_center
    return cols


def covariates_to_csv(series: ErrorSeries) -> str:
    cols = error_covariate_table(series)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols.keys())
    for row in zip(*cols.values()):
        w.writerow(["%.17g" % v for v in row])
    return buf.getvalue()
