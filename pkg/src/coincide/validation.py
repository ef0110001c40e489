"""Input validation helpers shared by the estimators and the IO layer."""

from __future__ import annotations

import numpy as np

from .errors import NormViolationError, ValidationError

UNIT_NORM_TOLERANCE = 1e-4


def as_2d_float64(x, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-D float64 array with at least one row/column."""
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} is not numeric: {exc}") from None
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must be non-empty, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "X") -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")


def row_norms(arr: np.ndarray) -> np.ndarray:
    """Euclidean row norms, accumulated in float64."""
    return np.linalg.norm(np.asarray(arr, dtype=np.float64), axis=1)


def check_unit_rows(
    arr: np.ndarray, tol: float = UNIT_NORM_TOLERANCE, name: str = "X"
) -> None:
    """Raise NormViolationError unless every row norm is 1 within ``tol``."""
    norms = row_norms(arr)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        i = int(bad[0])
        raise NormViolationError(
            f"{name} row {i} has norm {norms[i]:.6g}, expected 1 within {tol:g} "
            f"({bad.size} offending row(s))",
            hint="features must be unit-normalized before entering the pipeline",
        )


def normalized_rows(arr: np.ndarray, name: str = "X") -> np.ndarray:
    """Float64 copy with exactly unit-norm rows. Zero rows are an error."""
    out = as_2d_float64(arr, name)
    norms = np.linalg.norm(out, axis=1)
    zero = np.flatnonzero(norms < 1e-30)
    if zero.size:
        raise ValidationError(f"{name} row {int(zero[0])} has zero norm")
    return out / norms[:, None]
