"""Input validation helpers shared across the package.

All numeric entry points normalize their inputs to float64 ndarrays and
fail fast on malformed data, so the numerical code can assume clean,
finite, correctly shaped arrays.
"""

from __future__ import annotations

import numpy as np


def as_array(a, name: str = "array") -> np.ndarray:
    """Convert to a float64 ndarray and verify all entries are finite."""
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Convert to a finite 1-d float64 array."""
    arr = as_array(a, name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {arr.shape}")
    return arr


def as_matrix(a, name: str = "matrix", *, square: bool = False) -> np.ndarray:
    """Convert to a finite 2-d float64 array, optionally requiring squareness."""
    arr = as_array(a, name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {arr.shape}")
    if square and arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_symmetric(a: np.ndarray, name: str = "matrix", *, rtol: float = 1e-12) -> None:
    """Raise if ``a`` deviates from its transpose by more than ``rtol`` relative."""
    scale = np.abs(a).max() if a.size else 0.0
    if scale == 0.0:
        return
    if np.abs(a - a.T).max() > rtol * scale:
        raise ValueError(f"{name} is not symmetric to relative tolerance {rtol:g}")


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise ValueError(
            f"shape mismatch: {name_a} has shape {a.shape}, {name_b} has shape {b.shape}"
        )
