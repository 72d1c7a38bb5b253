"""Tensor shapes, observed samples and small dense materialization.

Coordinates are zero-based everywhere inside the package.  File formats
(see :mod:`gaugetc.io`) convert to and from one-based coordinates at the
boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

INT64_MAX = 2**63 - 1
DEFAULT_DENSE_LIMIT = 10**6


@dataclass(frozen=True)
class Shape:
    """Mode sizes ``(r_1, ..., r_p)`` of a tensor."""

    dims: tuple[int, ...]

    def __init__(self, dims: Iterable[int]):
        dims = tuple(int(r) for r in dims)
        if len(dims) < 1:
            raise ValueError("a shape needs at least one mode")
        if any(r < 1 for r in dims):
            raise ValueError(f"mode sizes must be positive, got {dims}")
        total = 1
        for r in dims:
            total *= r
        if total > INT64_MAX:
            raise ValueError(f"shape {dims} has more than 2**63 - 1 entries")
        object.__setattr__(self, "dims", dims)

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def rho(self) -> int:
        """Sum of the mode sizes (number of sign variables of a vertex)."""
        return sum(self.dims)

    @property
    def pi(self) -> int:
        """Number of tensor entries."""
        return math.prod(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __len__(self):
        return len(self.dims)

    def __getitem__(self, k):
        return self.dims[k]

    def __repr__(self):
        return f"Shape{self.dims}"


def as_shape(shape) -> Shape:
    return shape if isinstance(shape, Shape) else Shape(shape)


def check_index(shape: Shape, coords: Sequence[int]) -> tuple[int, ...]:
    """Validate one entry index against ``shape`` and return it as a tuple."""
    coords = tuple(int(c) for c in coords)
    if len(coords) != shape.order:
        raise ValueError(f"index {coords} has {len(coords)} coordinates, shape has {shape.order} modes")
    for k, (c, r) in enumerate(zip(coords, shape.dims)):
        if not 0 <= c < r:
            raise ValueError(f"coordinate {c} out of range for mode {k + 1} of size {r}")
    return coords


def check_indices(shape: Shape, indices) -> np.ndarray:
    """Validate an ``(n, p)`` integer index array; returns it as int64."""
    idx = np.asarray(indices)
    if idx.ndim == 1 and shape.order == 1:
        idx = idx.reshape(-1, 1)
    if idx.ndim != 2 or idx.shape[1] != shape.order:
        raise ValueError(f"expected an index array of shape (n, {shape.order}), got {idx.shape}")
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        as_int = idx.astype(np.int64)
        if not np.array_equal(as_int, idx):
            raise ValueError("indices must be integers")
        idx = as_int
    idx = idx.astype(np.int64, copy=False)
    dims = np.asarray(shape.dims, dtype=np.int64)
    bad = (idx < 0) | (idx >= dims)
    if bad.any():
        row, mode = np.argwhere(bad)[0]
        raise ValueError(
            f"row {row}: coordinate {idx[row, mode]} out of range for mode {mode + 1} "
            f"of size {dims[mode]}"
        )
    return idx


def flat_index(shape: Shape, indices: np.ndarray) -> np.ndarray:
    """Row-major (last mode fastest) flat positions of ``indices``."""
    return np.ravel_multi_index(tuple(np.asarray(indices).T), shape.dims)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Observed ``(index, value)`` pairs with per-index aggregates.

    ``unique`` lists the distinct observed indices in lexicographic order;
    ``counts[u]`` and ``means[u]`` are the multiplicity and the mean
    observation of ``unique[u]``.  ``inverse[i]`` maps row ``i`` to its
    unique position.
    """

    shape: Shape
    indices: np.ndarray
    values: np.ndarray
    unique: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)
    inverse: np.ndarray = field(repr=False)
    within_ss: float = field(repr=False)

    @classmethod
    def from_arrays(cls, shape, indices, values) -> "SampleSet":
        shape = as_shape(shape)
        idx = check_indices(shape, indices)
        y = np.asarray(values, dtype=float).reshape(-1)
        if len(y) != len(idx):
            raise ValueError(f"{len(idx)} indices but {len(y)} values")
        if len(y) == 0:
            raise ValueError("at least one sample is required")
        finite = np.isfinite(y)
        if not finite.all():
            row = int(np.argmin(finite))
            raise ValueError(f"row {row}: non-finite value {y[row]!r}")

        unique, inverse, counts = np.unique(idx, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        # Shift by one observation per index so identical duplicates average exactly.
        first = np.empty(len(unique))
        first[inverse[::-1]] = y[::-1]
        dev = np.bincount(inverse, weights=y - first[inverse], minlength=len(unique))
        means = first + dev / counts
        within_ss = math.fsum((y - means[inverse]) ** 2)

        for arr in (idx, y, unique, counts, means, inverse):
            arr.setflags(write=False)
        return cls(shape, idx, y, unique, counts, means, inverse, within_ss)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def n_unique(self) -> int:
        return len(self.unique)

    def aggregates(self) -> dict[tuple[int, ...], tuple[int, float]]:
        """``{index: (multiplicity, mean)}`` for every distinct index."""
        return {
            tuple(int(c) for c in x): (int(m), float(yb))
            for x, m, yb in zip(self.unique, self.counts, self.means)
        }


def ingest_samples(shape, rows: Sequence[tuple[Sequence[int], float]]) -> SampleSet:
    """Build a :class:`SampleSet` from ``(coords, value)`` rows.

    Duplicate observations of the same entry are all kept; their count and
    mean are recorded per distinct index.
    """
    shape = as_shape(shape)
    rows = list(rows)
    if not rows:
        raise ValueError("at least one sample is required")
    idx = np.empty((len(rows), shape.order), dtype=np.int64)
    y = np.empty(len(rows))
    for i, (coords, value) in enumerate(rows):
        try:
            idx[i] = check_index(shape, coords)
        except ValueError as err:
            raise ValueError(f"row {i}: {err}") from None
        y[i] = float(value)
        if not math.isfinite(y[i]):
            raise ValueError(f"row {i}: non-finite value {value!r}")
    return SampleSet.from_arrays(shape, idx, y)


def all_indices(shape) -> np.ndarray:
    """Every index of ``shape`` in row-major order, as a ``(pi, p)`` array."""
    shape = as_shape(shape)
    grids = np.indices(shape.dims).reshape(shape.order, -1)
    return grids.T.astype(np.int64)


def materialize_dense(model_or_fn, shape, max_entries: int = DEFAULT_DENSE_LIMIT) -> np.ndarray:
    """Evaluate a model (or a function of an index tuple) at every entry.

    The result is flat and row-major: the last mode varies fastest.
    Objects with an ``entries(indices)`` method are evaluated in one
    vectorized call.
    """
    shape = as_shape(shape)
    if shape.pi > max_entries:
        raise ValueError(
            f"shape {shape.dims} has {shape.pi} entries; dense materialization is limited "
            f"to {max_entries} (raise max_entries to at least {shape.pi})"
        )
    idx = all_indices(shape)
    if hasattr(model_or_fn, "entries"):
        return np.asarray(model_or_fn.entries(idx), dtype=float)
    fn: Callable = model_or_fn
    return np.array([fn(tuple(int(c) for c in x)) for x in idx], dtype=float)
