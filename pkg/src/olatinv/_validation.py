"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np


def check_unit_vectors(v, name="vectors", tol=1e-6) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ValueError(f"{name}: expected trailing dimension 3, got shape {v.shape}")
    n = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(n - 1.0) > tol):
        raise ValueError(f"{name}: expected unit-norm directions")
    return v


def check_points(x, name="points") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"{name}: expected an (N, 3) array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return x


def check_rotation(R, tol=1e-6) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if np.max(np.abs(R @ R.T - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation matrix is not orthonormal with det +1")
    return R


def parse_vector(text: str, n: int = 3, name: str = "vector") -> np.ndarray:
    """Parse ``"x,y,z"`` into a float array of length ``n``."""
    try:
        v = np.array([float(p) for p in text.split(",")], dtype=np.float64)
    except ValueError:
        raise ValueError(f"{name}: expected {n} comma-separated numbers, got {text!r}") from None
    if v.size == 1 and n > 1:
        v = np.repeat(v, n)
    if v.size != n:
        raise ValueError(f"{name}: expected {n} comma-separated numbers, got {text!r}")
    return v


def check_positive(x, name):
    if not x > 0:
        raise ValueError(f"{name} must be positive, got {x}")
    return x
