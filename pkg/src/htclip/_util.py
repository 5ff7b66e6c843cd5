"""Small numeric helpers shared across modules."""

from __future__ import annotations

import numpy as np


def row_norms(a: np.ndarray) -> np.ndarray:
    """Euclidean norm along the last axis.

    Single implementation used by every module so that batched rows and
    single vectors go through the identical reduction (bit-stable results
    regardless of batch shape).
    """
    a = np.asarray(a, dtype=float)
    return np.sqrt(np.add.reduce(a * a, axis=-1))


def as_vector(x, d: int | None = None) -> np.ndarray:
    """Coerce to a float64 1-D array; optionally check its length."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got array of shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise ValueError(f"dimension mismatch: expected {d}, got {v.shape[0]}")
    return v
