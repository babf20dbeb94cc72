"""Trajectory CSV files.

Plain trajectories use the header::

    t,x,y,z,qw,qx,qy,qz,frame,source

Capture sessions insert a receive-clock column after ``t``::

    t,recv_t,x,y,z,qw,qx,qy,qz,frame,source

Numbers are written with 17 significant digits, which reproduces every
double exactly on read.
"""

from __future__ import annotations

import csv
from typing import Optional

import numpy as np

from trackbench.core import Trajectory
from trackbench.errors import ParseError, ValidationError

TRAJECTORY_HEADER = ("t", "x", "y", "z", "qw", "qx", "qy", "qz", "frame", "source")
CAPTURE_HEADER = ("t", "recv_t", "x", "y", "z", "qw", "qx", "qy", "qz", "frame", "source")


def fmt(v) -> str:
    return "%.17g" % v


def trajectory_rows(traj: Trajectory, recv_t=None):
    for i in range(len(traj)):
        nums = [traj.t[i]]
        if recv_t is not None:
            nums.append(recv_t[i])
        nums.extend(traj.positions[i])
        nums.extend(traj.orientations[i])
        yield [fmt(v) for v in nums] + [traj.frame, traj.source]


def write_trajectory_csv(traj: Trajectory, path, recv_t=None):
    """Write ``traj``; pass ``recv_t`` to produce the capture layout."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CAPTURE_HEADER if recv_t is not None else TRAJECTORY_HEADER)
        w.writerows(trajectory_rows(traj, recv_t))


def read_trajectory_csv(path, clock: str = "sender", frame: Optional[str] = None) -> Trajectory:
    """Read a trajectory or capture CSV.

    For capture files ``clock="receive"`` takes timestamps from ``recv_t``.
    Raises :class:`ParseError` (with the line number) for malformed rows and
    :class:`ValidationError` for non-increasing timestamps or mixed frames.
    """
    if clock not in ("sender", "receive"):
        raise ValueError("clock must be 'sender' or 'receive'")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader, ()))
        if header == TRAJECTORY_HEADER:
            capture = False
        elif header == CAPTURE_HEADER:
            capture = True
        else:
            raise ParseError(f"unrecognized header {','.join(header)!r}", line=1)
        if clock == "receive" and not capture:
            raise ParseError("file has no recv_t column", line=1)
        width = len(header)
        n_num = width - 2
        nums, frames, sources = [], set(), set()
        for line, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ParseError(f"expected {width} fields, got {len(row)}", line=line)
            try:
                vals = [float(v) for v in row[:n_num]]
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from None
            if not all(np.isfinite(vals)):
                raise ParseError("non-finite value", line=line)
            nums.append(vals)
            frames.add(row[-2])
            sources.add(row[-1])

    if len(frames) > 1:
        raise ValidationError(f"file mixes frames {sorted(frames)}")
    if len(sources) > 1:
        raise ValidationError(f"file mixes sources {sorted(sources)}")
    a = np.array(nums, dtype=float).reshape(-1, n_num)
    if capture:
        t = a[:, 1] if clock == "receive" else a[:, 0]
        a = a[:, 1:]
    else:
        t = a[:, 0]
    bad = np.flatnonzero(np.diff(t) <= 0)
    if len(bad):
        raise ValidationError(f"timestamps not strictly increasing at line {bad[0] + 3}")
    return Trajectory(
        t,
        a[:, 1:4],
        a[:, 4:8] if len(a) else None,
        frames.pop() if frames else (frame or "world"),
        sources.pop() if sources else "",
    )
