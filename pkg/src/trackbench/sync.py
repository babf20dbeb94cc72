"""Temporal alignment of a test stream against a reference stream."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from trackbench.core import Trajectory, finite_difference_velocity, resample_at
from trackbench.errors import InputError, InsufficientSignalError, UnobservableLatencyError

# Default lag search range. The expected lag is on the order of 10 ms (camera
# latency plus one network hop), so +/-100 ms leaves a wide margin.
DEFAULT_SEARCH_WINDOW = 0.1
# Position smoothing before differentiation, in seconds.
DEFAULT_SMOOTHING = 0.05


@dataclass(frozen=True)
class LatencyEstimate:
    lag: float
    peak_correlation: float
    search_window: float

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    knot_times: np.ndarray
    method: str

    def as_dict(self):
        return {"rate": self.rate, "n_knots": int(len(self.knot_times)), "method": self.method}


@dataclass(frozen=True, eq=False)
class PairedSeries:
    """Reference and test points at common (reference-clock) timestamps."""

    t: np.ndarray
    ref_points: np.ndarray
    test_points: np.ndarray
    latency_applied: float = 0.0
    n_dropped: int = 0

    def __len__(self):
        return len(self.t)


def _speed_on_grid(traj, grid, width):
    # Positions on the grid, smoothed by a centered moving average of
    # ``width`` samples, then differentiated. The filter is symmetric, so
    # applying it to both streams leaves their relative lag untouched.
    dt = grid[1] - grid[0]
    p = np.column_stack([np.interp(grid, traj.t, traj.positions[:, j]) for j in range(3)])
    if width > 1:
        kernel = np.ones(width) / width
        half = width // 2
        padded = np.pad(p, ((half, half), (0, 0)), mode="edge")
        p = np.column_stack([np.convolve(padded[:, j], kernel, mode="valid") for j in range(3)])
    return np.linalg.norm(np.gradient(p, dt, axis=0), axis=1)


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    return float(np.dot(a, b) / den) if den > 0 else 0.0


def estimate_latency(
    ref: Trajectory,
    test: Trajectory,
    search_window: float = DEFAULT_SEARCH_WINDOW,
    smooth: float = DEFAULT_SMOOTHING,
) -> LatencyEstimate:
    """Lag of ``test`` behind ``ref`` from the cross-correlation of speeds.

    Both speed profiles are sampled on a common grid at the lower of the two
    rates, after a centered moving average over ``smooth`` seconds (0
    disables it) of the positions to keep sensor noise out of the speed.
    For every whole-grid lag within ``search_window`` the normalized
    correlation of the overlapping parts is computed; the best lag (ties go
    to the smallest magnitude) is refined by a parabola through the peak and
    its neighbours. Positive lag means the test stream is late.
    """
    if len(ref) < 100 or len(test) < 100:
        raise InputError("latency estimation needs at least 100 samples per stream")
    lo = max(ref.t[0], test.t[0])
    hi = min(ref.t[-1], test.t[-1])
    if hi - lo < 10 * search_window:
        raise InputError(f"streams overlap for {max(hi - lo, 0):.3g} s; need at least {10 * search_window:.3g} s")

    dt = 1.0 / min(ref.rate(), test.rate())
    k_max = int(np.floor(search_window / dt))
    width = 2 * int(round(smooth / dt / 2)) + 1
    grid = lo + dt * np.arange(int(np.floor((hi - lo) / dt)) + 1)
    s_ref = _speed_on_grid(ref, grid, width)
    if np.ptp(s_ref) <= 1e-12 * max(np.max(s_ref), 1e-300) or np.max(s_ref) == 0:
        raise UnobservableLatencyError("reference stream shows no speed variation")
    # Test speed on the grid extended by the search range on both sides.
    ext = lo + dt * np.arange(-k_max, len(grid) + k_max)
    s_test = _speed_on_grid(test, ext, width)
    if np.ptp(s_test) <= 1e-12 * max(np.max(s_test), 1e-300) or np.max(s_test) == 0:
        raise UnobservableLatencyError("test stream shows no speed variation")
    valid = (ext >= test.t[0]) & (ext <= test.t[-1])

    lags = np.arange(-k_max, k_max + 1)
    corr = np.empty(len(lags))
    n = len(grid)
    for m, k in enumerate(lags):
        seg = slice(k + k_max, k + k_max + n)
        ok = valid[seg]
        corr[m] = _pearson(s_ref[ok], s_test[seg][ok]) if ok.sum() > 2 else -np.inf

    best = np.flatnonzero(corr == corr.max())
    m = best[np.argmin(np.abs(lags[best]))]
    frac = 0.0
    if 0 < m < len(lags) - 1:
        c0, c1, c2 = corr[m - 1], corr[m], corr[m + 1]
        den = c0 - 2 * c1 + c2
        if den < 0:
            frac = 0.5 * (c0 - c2) / den
    lag = float(np.clip((lags[m] + frac) * dt, -search_window, search_window))
    return LatencyEstimate(lag, float(np.clip(corr[m], -1.0, 1.0)), float(search_window))


def estimate_true_rate(traj: Trajectory, k: float = 5.0, floor_rel: float = 1e-6) -> RateEstimate:
    """Recover the internal update rate of a prediction-upsampled stream.

    A tracker that fills the gaps between real updates by linear
    extrapolation produces samples that are exactly collinear with their
    neighbours except around each real update (a knot). The magnitude of the
    per-sample second difference of position is thresholded at
    ``k * median``; runs of consecutive samples above threshold form one
    knot, located at the centroid of the run weighted by the second
    differences signed along their dominant direction. For piecewise-linear
    motion this centroid sits a fixed prediction horizon before the true
    update instant, so knot intervals come out unbiased.
    The rate is the reciprocal of the median knot interval.

    A rounding floor of ``floor_rel`` times the median step length keeps
    exactly collinear samples from registering as knots. If nearly every
    sample rises above that floor the stream carries no prediction
    structure and every sample is reported as a knot.

    Knots separate cleanly from about 3x oversampling upward; closer to 2x
    neighbouring knot runs touch and merge. Streams rounded to float32, as
    OSC delivers them, need ``floor_rel`` near 1e-2.
    """
    if len(traj) < 3:
        raise InsufficientSignalError("need at least 3 samples")
    p = traj.positions
    d2_vec = p[2:] - 2 * p[1:-1] + p[:-2]
    d2 = np.linalg.norm(d2_vec, axis=1)
    t_mid = traj.t[1:-1]
    step = np.median(np.linalg.norm(np.diff(p, axis=0), axis=1))
    floor = floor_rel * step
    if step == 0:
        raise InsufficientSignalError("stream does not move")

    if np.mean(d2 > floor) >= 0.9:
        knots = traj.t
        method = "every-sample"
    else:
        # Below 4x oversampling most samples sit next to a knot and the
        # median is itself a knot value, so it is capped at the floor.
        above = d2 > max(k * min(np.median(d2), floor), floor)
        idx = np.flatnonzero(above)
        if len(idx) == 0:
            raise InsufficientSignalError("no update knots detected")
        runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
        knots = np.array([_knot_time(t_mid[r], d2_vec[r]) for r in runs])
        method = "second-difference"
    if len(knots) < 10:
        raise InsufficientSignalError(f"only {len(knots)} update knots detected; need 10")
    rate = 1.0 / float(np.median(np.diff(knots)))
    return RateEstimate(rate, np.asarray(knots), method)


def _knot_time(t, d2_vec):
    u = d2_vec[np.argmax(np.linalg.norm(d2_vec, axis=1))]
    w = d2_vec @ u
    if abs(w.sum()) <= 1e-9 * np.abs(w).sum():
        w = np.abs(w)
    return float(np.sum(t * w) / np.sum(w))


def build_pairs(ref: Trajectory, test: Trajectory, latency: float = 0.0, max_gap: float = np.inf) -> PairedSeries:
    """Pair each test sample with the reference interpolated at the same instant.

    Test timestamps are shifted by ``-latency`` onto the reference clock and
    the reference is interpolated there. Test samples outside the reference
    span, or falling in a reference gap longer than ``max_gap``, are dropped
    and counted.
    """
    t_shifted = test.t - latency
    r = resample_at(ref, t_shifted, max_gap)
    if len(r) == 0:
        raise InputError("reference and test streams do not overlap")
    idx = np.searchsorted(t_shifted, r.t)
    return PairedSeries(r.t, r.positions, test.positions[idx], float(latency), len(test) - len(r))
