"""Input checks shared by the estimators."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_consistent_length

from .tensor import Shape, check_indices


def check_index_array(X, shape: Shape | None = None) -> tuple[np.ndarray, Shape]:
    """Validate an ``(n, p)`` array of zero-based integer entry indices.

    Without ``shape`` the smallest shape containing every index is used.
    """
    X = check_array(X, dtype=None, ensure_2d=True, ensure_all_finite=True)
    if not np.issubdtype(X.dtype, np.integer):
        as_int = X.astype(np.int64)
        if not np.array_equal(as_int, X):
            raise ValueError("X must hold integer entry indices")
        X = as_int
    X = X.astype(np.int64, copy=False)
    if shape is None:
        if (X < 0).any():
            raise ValueError("entry indices must be nonnegative")
        shape = Shape(X.max(axis=0) + 1)
    elif not isinstance(shape, Shape):
        shape = Shape(shape)
    return check_indices(shape, X), shape


def check_index_data(X, y, shape=None):
    X, shape = check_index_array(X, shape)
    y = check_array(y, ensure_2d=False, dtype=np.float64, ensure_all_finite=True)
    if y.ndim != 1:
        raise ValueError(f"y must be one-dimensional, got shape {y.shape}")
    check_consistent_length(X, y)
    return X, y, shape


def seed_from(random_state) -> int:
    """Integer seed for the solvers from a scikit-learn style ``random_state``."""
    if isinstance(random_state, numbers.Integral):
        return int(random_state)
    return int(check_random_state(random_state).randint(2**31 - 1))
