"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np


def as_float_matrix(a, name: str = "X", allow_nan: bool = False) -> np.ndarray:
    """Coerce to a 2-d float array, rejecting non-finite entries by default."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_float_vector(a, name: str = "y", allow_nan: bool = False) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_binary_vector(a, name: str = "d") -> np.ndarray:
    """Coerce to an integer 0/1 vector."""
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    out = arr.astype(np.int64, copy=True)
    if not np.array_equal(out, arr):
        raise ValueError(f"{name} must be integer-valued")
    if not np.isin(out, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 values")
    return out


def check_aligned(n: int, **arrays) -> None:
    """Require every array to have ``n`` leading rows."""
    for name, arr in arrays.items():
        if arr is None:
            continue
        if np.shape(arr)[0] != n:
            raise ValueError(
                f"{name} has {np.shape(arr)[0]} rows, expected {n} (misaligned inputs)"
            )


def check_x_cols(x_cols, n_cols: int, name: str = "x_cols") -> tuple[int, ...]:
    """Validate a strictly increasing list of in-bounds column indices."""
    cols = tuple(int(c) for c in x_cols)
    if len(cols) == 0:
        raise ValueError(f"{name} must select at least one column")
    if any(c < 0 or c >= n_cols for c in cols):
        raise ValueError(f"{name} out of bounds for {n_cols} columns: {cols}")
    if any(b <= a for a, b in zip(cols, cols[1:])):
        raise ValueError(f"{name} must be strictly increasing: {cols}")
    return cols


def readonly(arr: np.ndarray) -> np.ndarray:
    """Return the array flagged read-only (containers are immutable by contract)."""
    arr.setflags(write=False)
    return arr
