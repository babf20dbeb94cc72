"""Spatial alignment of corresponded point sets and pivot calibration.

Rigid registration follows the centroid + SVD construction (Arun, Huang and
Blostein, 1987): center both sets, take the SVD of the 3x3 cross-covariance
and build the rotation from its singular vectors, flipping the last
singular direction when the raw product would be a reflection. The
similarity variant adds the closed-form least-squares scale of Umeyama
(1991) on top of the same decomposition.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from trackbench.core import RigidTransform, SimilarityTransform, Transform, quat_to_matrix
from trackbench.errors import DegenerateGeometryError, InputError
from trackbench.metrics import SummaryStats, descriptive_stats_values

# Cross-covariance singular values below this fraction of the largest are
# treated as zero.
RANK_TOL = 1e-9
# Pivot systems whose normal matrix is worse conditioned than this are
# rejected as lacking rotational diversity.
PIVOT_COND_MAX = 1e8


@dataclass(frozen=True)
class RegistrationDiagnostics:
    singular_values: tuple
    rms_residual: float
    max_residual: float
    reflection_corrected: bool
    n_points: int


@dataclass(frozen=True)
class PivotResult:
    tool_offset: np.ndarray
    pivot_point: np.ndarray
    rms_residual: float
    condition_number: float


def _as_points(P, name):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3:
        raise InputError(f"{name} must be an (n, 3) array of points, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise InputError(f"{name} contains non-finite values")
    return P


def compute_centroid(points) -> np.ndarray:
    """Arithmetic mean of an (n, 3) point array."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        raise InputError("cannot take the centroid of an empty point set")
    return P.mean(axis=0)


def _decompose(A, B):
    A = _as_points(A, "A")
    B = _as_points(B, "B")
    if A.shape != B.shape:
        raise InputError(f"point sets differ in size: {len(A)} vs {len(B)}")
    n = len(A)
    if n < 3:
        raise DegenerateGeometryError(f"need at least 3 corresponded points, got {n}")
    c_A = compute_centroid(A)
    c_B = compute_centroid(B)
    A0 = A - c_A
    B0 = B - c_B
    H = A0.T @ B0
    U, S, Vt = np.linalg.svd(H)
    if not S[0] > 0:
        raise DegenerateGeometryError("singular value 1 of the cross-covariance is zero (coincident points)")
    # A planar set has rank 2 and still fixes the rotation; collinear does not.
    if S[1] < RANK_TOL * S[0]:
        raise DegenerateGeometryError(
            f"singular value 2 of the cross-covariance is {S[1]:.3g} "
            f"(< {RANK_TOL:g} x {S[0]:.3g}); the point set is collinear"
        )
    V = Vt.T
    d = -1.0 if np.linalg.det(V @ U.T) < 0 else 1.0
    D = np.diag([1.0, 1.0, d])
    R = V @ D @ U.T
    return A, B, A0, c_A, c_B, S, D, R, d < 0


def _diagnostics(A, B, T, S, corrected):
    r = np.linalg.norm(T.apply(A) - B, axis=1)
    return RegistrationDiagnostics(
        singular_values=tuple(float(s) for s in S),
        rms_residual=float(np.sqrt(np.mean(r**2))),
        max_residual=float(np.max(r)),
        reflection_corrected=bool(corrected),
        n_points=len(A),
    )


def rigid_register(A, B, from_frame="test", to_frame="reference"):
    """Least-squares rigid transform taking points ``A`` onto ``B``.

    ``A[i]`` and ``B[i]`` must be the same physical point seen in the two
    frames. Returns ``(RigidTransform, RegistrationDiagnostics)``.
    """
    A, B, _, c_A, c_B, S, _, R, corrected = _decompose(A, B)
    t = c_B - R @ c_A
    T = RigidTransform(R, t, from_frame, to_frame)
    return T, _diagnostics(A, B, T, S, corrected)


def similarity_register(A, B, from_frame="test", to_frame="reference", fixed_scale: Optional[float] = None):
    """Like :func:`rigid_register` with an additional uniform scale.

    The scale is ``trace(S D) / sum |A_i - c_A|^2``, where ``D`` carries the
    reflection correction. Pass ``fixed_scale`` to pin it instead.
    """
    A, B, A0, c_A, c_B, S, D, R, corrected = _decompose(A, B)
    if fixed_scale is None:
        s = float(np.sum(S * np.diag(D)) / np.sum(A0**2))
    else:
        s = float(fixed_scale)
    t = c_B - s * (R @ c_A)
    T = SimilarityTransform(s, RigidTransform(R, t, from_frame, to_frame))
    return T, _diagnostics(A, B, T, S, corrected)


def pivot_calibrate(rotations, translations) -> PivotResult:
    """Locate the point of a rigid body that stays still while it rotates.

    ``rotations`` (n, 3, 3) and ``translations`` (n, 3) are body-to-world
    poses. Solves ``R_i p + t_i = c`` in least squares for the body-frame
    offset ``p`` and the world pivot ``c`` with one stacked linear system
    ``[R_i | -I] (p; c) = -t_i``.
    """
    Rs = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    ts = np.asarray(translations, dtype=float).reshape(-1, 3)
    n = len(Rs)
    if n != len(ts):
        raise InputError(f"{n} rotations but {len(ts)} translations")
    if n < 3:
        raise InputError(f"pivot calibration needs at least 3 poses, got {n}")
    M = np.concatenate([Rs, np.broadcast_to(-np.eye(3), (n, 3, 3))], axis=2).reshape(3 * n, 6)
    b = -ts.reshape(3 * n)
    cond = np.linalg.cond(M.T @ M)
    if not cond <= PIVOT_COND_MAX:
        raise DegenerateGeometryError(
            f"pivot normal equations have condition number {cond:.3g} (> {PIVOT_COND_MAX:g}); "
            "poses lack rotational diversity"
        )
    x, *_ = np.linalg.lstsq(M, b, rcond=None)
    p, c = x[:3], x[3:]
    r = np.linalg.norm(Rs @ p + ts - c, axis=1)
    return PivotResult(p, c, float(np.sqrt(np.mean(r**2))), float(cond))


def apply_tool_offset(traj, tool_offset):
    """Move every sample from the body origin to the body-frame point
    ``tool_offset``: ``p_i + R_i @ tool_offset``."""
    off = np.asarray(tool_offset, dtype=float).reshape(3)
    if len(traj) == 0:
        return traj
    return traj.replace(positions=traj.positions + quat_to_matrix(traj.orientations) @ off)


def registration_residual(A, B, T: Transform) -> SummaryStats:
    """Per-point distance ``|T(A_i) - B_i|`` summarized in millimeters."""
    A = _as_points(A, "A")
    B = _as_points(B, "B")
    if A.shape != B.shape:
        raise InputError(f"point sets differ in size: {len(A)} vs {len(B)}")
    return descriptive_stats_values(1000.0 * np.linalg.norm(T.apply(A) - B, axis=1))


# -- JSON document -----------------------------------------------------------
#
#   {
#     "kind": "rigid" | "similarity",
#     "from_frame": str, "to_frame": str,
#     "rotation": [9 floats, row-major],
#     "translation": [3 floats, meters],
#     "scale": float,                  # similarity only
#     "diagnostics": {...},            # optional
#     "tool_offset": [3 floats]        # optional, body-frame point offset
#   }
#
# Floats are written with Python's shortest round-trip repr, so a
# load/dump cycle reproduces every double bit for bit.


def transform_to_dict(T: Transform, diagnostics: Optional[RegistrationDiagnostics] = None, **extra) -> dict:
    doc = {
        "kind": "similarity" if isinstance(T, SimilarityTransform) else "rigid",
        "from_frame": T.from_frame,
        "to_frame": T.to_frame,
        "rotation": [float(v) for v in np.asarray(T.rotation).ravel()],
        "translation": [float(v) for v in T.translation],
    }
    if isinstance(T, SimilarityTransform):
        doc["scale"] = T.scale
    if diagnostics is not None:
        doc["diagnostics"] = asdict(diagnostics)
        doc["diagnostics"]["singular_values"] = list(diagnostics.singular_values)
    doc.update(extra)
    return doc


def transform_from_dict(doc: dict) -> Transform:
    try:
        rigid = RigidTransform(
            np.array(doc["rotation"], dtype=float).reshape(3, 3),
            np.array(doc["translation"], dtype=float),
            doc["from_frame"],
            doc["to_frame"],
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"malformed transform document: {exc}") from exc
    if doc.get("kind", "rigid") == "similarity":
        return SimilarityTransform(doc["scale"], rigid)
    return rigid


def save_transform(path, T: Transform, diagnostics=None, **extra):
    with open(path, "w") as f:
        json.dump(transform_to_dict(T, diagnostics, **extra), f, indent=2)
        f.write("\n")


def load_transform(path) -> Transform:
    with open(path) as f:
        return transform_from_dict(json.load(f))
