"""Sign vertices, atomic models and the gauge norm they certify.

A sign vertex stores one ``{-1, +1}`` vector per mode; the tensor it
induces has entry ``prod_k theta[k][x_k]`` and is never materialized.  An
atomic model is ``lam * sum_v a_v * v`` with convex weights, so it is a
constructive certificate that its gauge norm is at most ``lam``.
"""
from __future__ import annotations

import itertools
import math
from typing import Iterable, Sequence

import numpy as np

from .tensor import Shape, all_indices, as_shape, check_index, check_indices

WEIGHT_SUM_TOL = 1e-9


class SignVertex:
    """A rank-1 tensor with all entries in ``{-1, +1}``.

    Parameters
    ----------
    signs : sequence of 1-d arrays
        One sign vector per mode; every entry must be exactly -1 or +1.
    """

    __slots__ = ("signs", "_key")

    def __init__(self, signs: Iterable[Sequence[int]]):
        vecs = []
        for k, s in enumerate(signs):
            a = np.asarray(s)
            if a.ndim != 1 or a.size == 0:
                raise ValueError(f"mode {k + 1}: sign vector must be a nonempty 1-d array")
            if not np.all((a == 1) | (a == -1)):
                raise ValueError(f"mode {k + 1}: entries must be exactly -1 or +1")
            a = a.astype(np.int8)
            a.setflags(write=False)
            vecs.append(a)
        if not vecs:
            raise ValueError("a vertex needs at least one mode")
        self.signs = tuple(vecs)
        self._key = b"".join(v.tobytes() for v in self.signs)

    @classmethod
    def ones(cls, shape) -> "SignVertex":
        return cls([np.ones(r, dtype=np.int8) for r in as_shape(shape)])

    @classmethod
    def from_flat(cls, flat, shape) -> "SignVertex":
        """Split a length-``rho`` sign vector into per-mode vectors."""
        shape = as_shape(shape)
        flat = np.asarray(flat)
        if flat.size != shape.rho:
            raise ValueError(f"expected {shape.rho} signs, got {flat.size}")
        cuts = np.cumsum(shape.dims)[:-1]
        return cls(np.split(flat, cuts))

    @property
    def shape(self) -> Shape:
        return Shape(len(s) for s in self.signs)

    @property
    def order(self) -> int:
        return len(self.signs)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.signs)

    def sort_key(self) -> tuple[int, ...]:
        """Lexicographic order over the concatenated signs; used for tie breaks."""
        return tuple(int(s) for s in self.flat())

    def negated(self) -> "SignVertex":
        return SignVertex([-self.signs[0], *self.signs[1:]])

    def __eq__(self, other):
        return isinstance(other, SignVertex) and self._key == other._key and \
            self.shape == other.shape

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        body = ", ".join("(" + ",".join("+1" if s > 0 else "-1" for s in v) + ")" for v in self.signs)
        return f"SignVertex({body})"


def _check_vertex_shape(v: SignVertex, shape: Shape):
    if v.shape != shape:
        raise ValueError(f"vertex shape {v.shape.dims} does not match {shape.dims}")


def vertex_entry(v: SignVertex, x: Sequence[int]) -> int:
    """Entry of the vertex tensor at index ``x`` (always +1 or -1)."""
    x = check_index(v.shape, x)
    out = 1
    for s, c in zip(v.signs, x):
        out *= int(s[c])
    return out


def vertex_project(v: SignVertex, indices) -> np.ndarray:
    """Vertex entries at each row of ``indices``, in the same order."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return np.zeros(0, dtype=np.int8)
    idx = check_indices(v.shape, idx)
    out = v.signs[0][idx[:, 0]].copy()
    for k in range(1, v.order):
        out *= v.signs[k][idx[:, k]]
    return out


def canonicalize(v: SignVertex) -> SignVertex:
    """Equivalent vertex whose modes 2..p start with +1.

    Flipping two whole modes leaves every entry unchanged, so each mode
    ``k >= 2`` with a leading -1 is flipped together with mode 1.
    """
    signs = [s.copy() for s in v.signs]
    for k in range(1, len(signs)):
        if signs[k][0] < 0:
            signs[k] = -signs[k]
            signs[0] = -signs[0]
    return SignVertex(signs)


def is_canonical(v: SignVertex) -> bool:
    return all(s[0] > 0 for s in v.signs[1:])


def canonical_vertices(shape) -> list[SignVertex]:
    """All ``2**(rho - p + 1)`` canonical vertices of ``shape``."""
    shape = as_shape(shape)
    per_mode = []
    for k, r in enumerate(shape.dims):
        free = r if k == 0 else r - 1
        choices = []
        for bits in itertools.product((1, -1), repeat=free):
            choices.append(np.array(bits if k == 0 else (1, *bits), dtype=np.int8))
        per_mode.append(choices)
    return [SignVertex(combo) for combo in itertools.product(*per_mode)]


class AtomicModel:
    """``lam * sum_v a_v * v`` over sign vertices with convex weights.

    Parameters
    ----------
    shape : Shape or sequence of int
    lam : float
        Radius of the gauge-norm ball; the model's norm is at most ``lam * sum(a)``.
    weights : sequence of float
        Nonnegative, summing to at most one.
    vertices : sequence of SignVertex
        Pairwise distinct after canonicalization.
    """

    def __init__(self, shape, lam: float, weights=(), vertices=()):
        self.shape = as_shape(shape)
        self.lam = float(lam)
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be a finite nonnegative number, got {lam}")
        self.weights = np.array(weights, dtype=float).reshape(-1)
        self.vertices = list(vertices)
        if len(self.weights) != len(self.vertices):
            raise ValueError("weights and vertices differ in length")
        if np.any(~np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("weights must be finite and nonnegative")
        if self.weights.sum() > 1 + WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {self.weights.sum()!r} > 1")
        seen = set()
        for v in self.vertices:
            _check_vertex_shape(v, self.shape)
            key = canonicalize(v)
            if key in seen:
                raise ValueError(f"duplicate vertex {v!r}")
            seen.add(key)
        self.weights.setflags(write=False)

    @classmethod
    def zero(cls, shape, lam: float = 1.0) -> "AtomicModel":
        return cls(shape, lam)

    @classmethod
    def from_vertex(cls, v: SignVertex, lam: float = 1.0) -> "AtomicModel":
        return cls(v.shape, lam, [1.0], [v])

    @property
    def n_terms(self) -> int:
        return len(self.vertices)

    def entries(self, indices) -> np.ndarray:
        """Model values at each row of an ``(n, p)`` index array."""
        idx = check_indices(self.shape, indices)
        out = np.zeros(len(idx))
        for a, v in zip(self.weights, self.vertices):
            out += a * vertex_project(v, idx)
        return self.lam * out

    def to_factors(self) -> list[np.ndarray]:
        """CP factors ``F_k`` of shape ``(r_k, terms)``; weights folded into mode 1."""
        T = self.n_terms
        factors = [np.empty((r, T)) for r in self.shape.dims]
        for t, v in enumerate(self.vertices):
            for k, s in enumerate(v.signs):
                factors[k][:, t] = s
        factors[0] = factors[0] * (self.lam * self.weights)
        return factors

    def max_abs_bound(self) -> float:
        return self.lam * float(self.weights.sum())

    def __repr__(self):
        return f"AtomicModel(shape={self.shape.dims}, lam={self.lam}, terms={self.n_terms})"


def model_entry(m: AtomicModel, x: Sequence[int]) -> float:
    """``lam * sum_v a_v * vertex_entry(v, x)``."""
    x = check_index(m.shape, x)
    return m.lam * sum(a * vertex_entry(v, x) for a, v in zip(m.weights, m.vertices))


def cp_inner_product(f1: Sequence[np.ndarray], f2: Sequence[np.ndarray]) -> float:
    """Frobenius inner product of two CP tensors given by factor matrices.

    Uses ``<sum_r a_r, sum_s b_s> = sum_{r,s} prod_k <A_k[:, r], B_k[:, s]>``,
    so the cost is ``O(T1 * T2 * rho)`` and no tensor is formed.
    """
    if len(f1) != len(f2) or any(a.shape[0] != b.shape[0] for a, b in zip(f1, f2)):
        raise ValueError("factor shapes do not match")
    if f1[0].shape[1] == 0 or f2[0].shape[1] == 0:
        return 0.0
    gram = f1[0].T @ f2[0]
    for a, b in zip(f1[1:], f2[1:]):
        gram *= a.T @ b
    return float(gram.sum())


def model_inner_product(m1: AtomicModel, m2: AtomicModel) -> float:
    """Frobenius inner product of two atomic models, without materializing."""
    if m1.shape != m2.shape:
        raise ValueError(f"shape mismatch: {m1.shape.dims} vs {m2.shape.dims}")
    if m1.n_terms == 0 or m2.n_terms == 0:
        return 0.0
    # Sign-vector Gram products are integers; keep them exact before weighting.
    gram = None
    for k in range(m1.shape.order):
        a = np.stack([v.signs[k] for v in m1.vertices]).astype(np.int64)
        b = np.stack([v.signs[k] for v in m2.vertices]).astype(np.int64)
        g = a @ b.T
        gram = g if gram is None else gram * g
    gram = gram.astype(float)
    return m1.lam * m2.lam * float(m1.weights @ gram @ m2.weights)


def tiny_norm_oracle(psi, shape, max_rho: int = 16) -> float:
    """Exact gauge norm of a small dense tensor.

    Solves ``min sum(a)`` subject to ``sum_v a_v v = psi``, ``a >= 0`` over
    every canonical vertex (a set closed under negation).  Meant for tests:
    the enumeration grows as ``2**(rho - p + 1)``.
    """
    from scipy.optimize import linprog

    shape = as_shape(shape)
    if shape.rho > max_rho:
        raise ValueError(f"rho = {shape.rho} exceeds the enumeration guard {max_rho}")
    psi = np.asarray(psi, dtype=float).reshape(-1)
    if psi.size != shape.pi:
        raise ValueError(f"expected {shape.pi} entries, got {psi.size}")
    if not np.any(psi):
        return 0.0

    idx = all_indices(shape)
    verts = canonical_vertices(shape)
    V = np.stack([vertex_project(v, idx) for v in verts], axis=1).astype(float)
    res = linprog(
        np.ones(V.shape[1]), A_eq=V, b_eq=psi, bounds=(0, None), method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"norm LP failed: {res.message}")
    # Re-solve on the optimal support to remove solver tolerance from the value.
    support = np.flatnonzero(res.x > 1e-9)
    coef, *_ = np.linalg.lstsq(V[:, support], psi, rcond=None)
    if np.all(coef >= -1e-12) and np.allclose(V[:, support] @ coef, psi, atol=1e-12, rtol=0):
        return float(math.fsum(coef))
    return float(res.fun)
