"""Weak separation over the sign vertices of the gauge-norm ball.

Given a linear objective ``c`` (the gradient, supported on observed
entries), the current iterate ``psi`` and a gap estimate ``phi``, the
oracle either returns a vertex ``v`` with

    <c, psi - lam * v> >= phi / K

or certifies that no vertex (hence no point of the ball) does better than
``phi``.  Cheap alternating maximization is tried first; an exact
branch-and-bound over sign assignments settles the rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _bnb
from .gauge import SignVertex, canonicalize, vertex_project
from .tensor import Shape, as_shape, check_indices, flat_index


class OracleInconclusive(RuntimeError):
    """Branch-and-bound ran out of nodes before reaching a verdict.

    ``vertex`` and ``gap`` hold the best vertex found, which may still
    improve the objective although its gap is below ``phi / K``.
    """

    def __init__(self, message, vertex=None, gap=-math.inf):
        super().__init__(message)
        self.vertex = vertex
        self.gap = gap


@dataclass(frozen=True, eq=False)
class SeparationRequest:
    """Inputs of one oracle call, restricted to ``support(c)``.

    ``indices``, ``c`` and ``psi`` are aligned arrays; entries with
    ``c == 0`` are dropped at construction because they cannot affect
    any gap.
    """

    shape: Shape
    lam: float
    indices: np.ndarray
    c: np.ndarray
    psi: np.ndarray
    phi: float = 1.0
    K: float = 2.0
    c_dot_psi: float = field(init=False, repr=False)

    def __post_init__(self):
        shape = as_shape(self.shape)
        idx = check_indices(shape, self.indices)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        psi = np.asarray(self.psi, dtype=float).reshape(-1)
        if not (len(idx) == len(c) == len(psi)):
            raise ValueError("indices, c and psi must have equal length")
        if not (np.isfinite(c).all() and np.isfinite(psi).all()):
            raise ValueError("c and psi must be finite")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.phi > 0:
            raise ValueError(f"phi must be positive, got {self.phi}")
        if not self.K >= 1:
            raise ValueError(f"K must be at least 1, got {self.K}")
        keep = c != 0
        idx, c, psi = idx[keep], c[keep], psi[keep]
        for arr in (idx, c, psi):
            arr.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "c_dot_psi", math.fsum(c * psi))

    @classmethod
    def from_maps(cls, shape, lam, c: dict, psi: dict, phi=1.0, K=2.0) -> "SeparationRequest":
        """Build a request from ``{index: value}`` maps; ``support(c)`` must lie in ``psi``."""
        missing = [x for x in c if x not in psi]
        if missing:
            raise ValueError(f"c is supported at {missing[0]} where psi is not given")
        keys = list(c)
        idx = np.array(keys, dtype=np.int64).reshape(len(keys), -1) if keys else \
            np.zeros((0, len(as_shape(shape))), dtype=np.int64)
        return cls(shape, lam, idx, [c[x] for x in keys], [psi[x] for x in keys], phi, K)

    @property
    def target(self) -> float:
        return self.phi / self.K

    def with_phi(self, phi: float) -> "SeparationRequest":
        return SeparationRequest(self.shape, self.lam, self.indices, self.c, self.psi, phi, self.K)


@dataclass(frozen=True)
class Separated:
    vertex: SignVertex
    gap: float
    source: str = "heuristic"


@dataclass(frozen=True)
class NoSeparation:
    certified_bound: float
    nodes: int = 0


class BranchAndBoundResult(NamedTuple):
    best: SignVertex
    incumbent_gap: float
    dual_bound: float
    exhausted: bool
    reached_target: bool
    nodes: int


def separation_gap(req: SeparationRequest, v: SignVertex) -> float:
    """``sum_x c_x * (psi_x - lam * v_x)`` over ``support(c)``, correctly rounded."""
    if len(req.c) == 0:
        return 0.0
    proj = vertex_project(v, req.indices)
    return math.fsum(req.c * (req.psi - req.lam * proj))


def random_vertex(shape, rng: np.random.Generator) -> SignVertex:
    return SignVertex([rng.choice(np.array([-1, 1], dtype=np.int8), size=r) for r in as_shape(shape)])


def alternating_max(req: SeparationRequest, start: SignVertex, max_passes: int = 10,
                    trace: list | None = None, stats: dict | None = None) -> SignVertex:
    """Coordinate-flip ascent on the separation gap.

    Each pass visits modes in order and, within a mode, every coordinate;
    a flip is kept only if it strictly increases the gap.  Flips inside
    one mode touch disjoint terms, so a mode is swept in one vectorized
    step that is equivalent to visiting its coordinates one by one.
    Passes repeat until one makes no flip or ``max_passes`` is reached.

    If ``trace`` is a list, the gap after every accepted flip is appended
    (starting with the gap of ``start``).  ``stats["passes"]`` receives
    the number of passes run, ``stats["converged"]`` whether the last one
    made no flip.
    """
    if start.shape != req.shape:
        raise ValueError("start vertex does not match the request shape")
    if max_passes < 1:
        raise ValueError(f"max_passes must be at least 1, got {max_passes}")
    signs = [s.astype(np.int8).copy() for s in start.signs]
    idx, c = req.indices, req.c
    if stats is not None:
        stats.update(passes=0, converged=True)
    if len(c) == 0:
        if trace is not None:
            trace.append(0.0)
        return SignVertex(signs)
    prod = vertex_project(start, idx).astype(float)
    gap = req.c_dot_psi - req.lam * float(c @ prod)
    if trace is not None:
        trace.append(gap)
    flipped = True
    for npass in range(1, max_passes + 1):
        flipped = False
        for k, r in enumerate(req.shape.dims):
            # Flipping theta[k][j] changes the gap by 2 * lam * D[j].
            D = np.bincount(idx[:, k], weights=c * prod, minlength=r)
            flips = np.flatnonzero(D > 0)
            if flips.size == 0:
                continue
            flipped = True
            if trace is not None:
                for j in flips:
                    gap += 2 * req.lam * D[j]
                    trace.append(gap)
            signs[k][flips] *= -1
            prod *= np.where(np.isin(idx[:, k], flips), -1.0, 1.0)
        if not flipped:
            break
    if stats is not None:
        stats.update(passes=npass, converged=not flipped)
    return SignVertex(signs)


def _branch_structure(req: SeparationRequest):
    """Branch order, term lists and initial unresolved counts for the search."""
    shape = req.shape
    p = shape.order
    idx = req.indices
    absc = np.abs(req.c)
    offsets = np.concatenate([[0], np.cumsum(shape.dims)]).astype(np.int64)
    var_flat, var_lists = [], []
    fixed = np.zeros((len(idx), p), dtype=bool)
    for k in range(p - 1):
        mass = np.bincount(idx[:, k], weights=absc, minlength=shape[k])
        touched = np.flatnonzero(np.bincount(idx[:, k], minlength=shape[k]))
        order = touched[np.lexsort((touched, -mass[touched]))]
        if order.size == 0:
            continue
        # Flipping mode k together with the last mode preserves the tensor,
        # so the heaviest coordinate of mode k is fixed to +1.
        fixed[:, k] = idx[:, k] == order[0]
        for j in order[1:]:
            var_flat.append(offsets[k] + j)
            var_lists.append(np.flatnonzero(idx[:, k] == j))
    var_ptr = np.zeros(len(var_lists) + 1, dtype=np.int64)
    if var_lists:
        var_ptr[1:] = np.cumsum([len(v) for v in var_lists])
        var_terms = np.concatenate(var_lists).astype(np.int64)
    else:
        var_terms = np.zeros(0, dtype=np.int64)
    init_cnt = (p - 1) - fixed[:, : p - 1].sum(axis=1)
    return (offsets, np.asarray(var_flat, dtype=np.int64), var_ptr, var_terms,
            init_cnt.astype(np.int64))


def exact_branch_and_bound(req: SeparationRequest, target: float = math.inf,
                           node_budget: int | None = None,
                           incumbent: SignVertex | None = None,
                           prune_floor: float | None = None) -> BranchAndBoundResult:
    """Maximize the separation gap over all sign vertices.

    The search stops early once a vertex with gap ``>= target`` is found.
    Run to exhaustion with ``prune_floor=None`` it returns the exact
    optimum and ``dual_bound == incumbent_gap``.  With a finite
    ``prune_floor`` every subtree whose bound is at most the floor is
    discarded; an exhausted search then only certifies
    ``max gap <= dual_bound`` where ``dual_bound <= max(prune_floor, optimum)``.

    Raises
    ------
    ValueError
        If ``c`` has empty support (the maximum gap is then zero).
    """
    if len(req.c) == 0:
        raise ValueError("support(c) is empty; the maximum gap is 0")
    shape = req.shape
    offsets, var_flat, var_ptr, var_terms, init_cnt = _branch_structure(req)
    start = incumbent if incumbent is not None else SignVertex.ones(shape)
    if start.shape != shape:
        raise ValueError("incumbent does not match the request shape")
    scale = abs(req.c_dot_psi) + req.lam * float(np.abs(req.c).sum())
    margin = 1e-12 * max(scale, 1e-300)
    budget = np.iinfo(np.int64).max if node_budget is None else int(node_budget)
    floor = -math.inf if prune_floor is None else float(prune_floor)
    kernel_target = target + margin if math.isfinite(target) else math.inf

    theta, _, dual, status, nodes = _bnb.search(
        req.indices, req.c, np.asarray(shape.dims, dtype=np.int64), offsets, req.lam,
        req.c_dot_psi, var_flat, var_ptr, var_terms, init_cnt,
        start.flat().astype(np.int8), kernel_target, floor, budget, margin,
    )
    best = canonicalize(SignVertex.from_flat(theta, shape))
    gap = separation_gap(req, best)
    exhausted = status == _bnb.STATUS_EXHAUSTED
    if exhausted:
        dual = gap if prune_floor is None else max(gap, dual)
    else:
        dual = math.nan
    return BranchAndBoundResult(best, gap, dual, exhausted, status == _bnb.STATUS_TARGET, int(nodes))


def _pick_best(candidates: Iterable[tuple[float, SignVertex]]) -> tuple[float, SignVertex]:
    # Highest gap; ties go to the lexicographically smallest vertex.
    return max(candidates, key=lambda gv: (gv[0], tuple(-s for s in gv[1].sort_key())))


def weak_separation_oracle(req: SeparationRequest, incumbents: Sequence[SignVertex] = (),
                           restarts: int = 5, max_passes: int = 10,
                           rng: np.random.Generator | int | None = None,
                           node_budget: int | None = None,
                           certify_at_phi: bool = False,
                           stats: dict | None = None):
    """Separate ``psi`` from the ball or certify that no vertex gains ``phi``.

    Alternating maximization runs from every incumbent and from
    ``restarts`` random vertices; the best result is returned if it
    reaches ``phi / K``.  Otherwise branch-and-bound, warm-started with
    that vertex, either finds such a vertex or exhausts.  On exhaustion
    the certified bound is the exact optimum, or with ``certify_at_phi``
    a bound no larger than ``phi`` that allows pruning at ``phi``.

    Raises
    ------
    OracleInconclusive
        If the node budget runs out first.
    """
    if len(req.c) == 0:
        return NoSeparation(0.0)
    rng = np.random.default_rng(rng)
    starts = [v for v in incumbents if v.shape == req.shape]
    starts += [random_vertex(req.shape, rng) for _ in range(restarts)]
    if not starts:
        starts = [SignVertex.ones(req.shape)]
    cands = []
    for s in starts:
        v = canonicalize(alternating_max(req, s, max_passes=max_passes))
        cands.append((separation_gap(req, v), v))
    gap, v = _pick_best(cands)
    if gap >= req.target:
        if stats is not None:
            stats["heuristic"] = stats.get("heuristic", 0) + 1
        return Separated(v, gap, "heuristic")

    res = exact_branch_and_bound(req, target=req.target, node_budget=node_budget, incumbent=v,
                                 prune_floor=req.phi if certify_at_phi else None)
    if stats is not None:
        stats["nodes"] = stats.get("nodes", 0) + res.nodes
    if res.reached_target and res.incumbent_gap >= req.target:
        if stats is not None:
            stats["exact"] = stats.get("exact", 0) + 1
        return Separated(res.best, res.incumbent_gap, "exact")
    if res.exhausted and res.dual_bound <= req.phi:
        if stats is not None:
            stats["certified"] = stats.get("certified", 0) + 1
        return NoSeparation(res.dual_bound, res.nodes)
    raise OracleInconclusive(
        f"branch-and-bound stopped after {res.nodes} nodes without a verdict "
        f"(best gap {res.incumbent_gap:.6g}, target {req.target:.6g})",
        res.best, res.incumbent_gap,
    )


# --- integer program export -------------------------------------------------------

@dataclass
class LinearConstraint:
    name: str
    coefs: dict
    sense: str
    rhs: float


@dataclass
class MilpModel:
    """Separation integer program with 0-1 sign variables.

    ``theta = 2 * s - 1``; chain variables ``y[x, k]`` equal the product of
    the signs of modes ``k..p`` at ``x`` for every feasible ``s``.
    """

    objective: dict
    constraints: list
    bounds: dict
    binaries: list
    y_names: dict

    def chain_constraints(self, flat: int) -> list[LinearConstraint]:
        prefix = f"link_{flat}_"
        return [con for con in self.constraints if con.name.startswith(prefix)]


def s_name(k: int, j: int) -> str:
    """0-1 variable of mode ``k``, coordinate ``j`` (zero-based in, one-based out)."""
    return f"s_{k + 1}_{j + 1}"


def y_name(flat: int, k: int) -> str:
    """Chain variable at flat entry ``flat`` (zero-based), link ``k`` (zero-based in, one-based out)."""
    return f"y_{flat}_{k + 1}"


OBJ_CONST = "obj_const"


def build_milp(req: SeparationRequest) -> MilpModel:
    """Linearized separation program over ``support(c)``.

    For each observed ``x`` and link ``k < p`` four inequalities force
    ``y[x,k] = theta[k][x_k] * y[x,k+1]`` at every 0-1 point; the last link
    is ``y[x,p] = theta[p][x_p]``.  The objective is
    ``<c, psi> - lam * sum_x c_x * y[x,1]``, with the constant carried by a
    variable fixed to one.
    """
    shape = req.shape
    p = shape.order
    flats = flat_index(shape, req.indices) if len(req.c) else np.zeros(0, dtype=np.int64)
    order = np.argsort(flats, kind="stable")
    objective = {OBJ_CONST: req.c_dot_psi}
    constraints: list[LinearConstraint] = []
    bounds = {OBJ_CONST: (1.0, 1.0)}
    binaries = set()
    y_names = {}
    for t in order:
        x = req.indices[t]
        f = int(flats[t])
        ys = [y_name(f, k) for k in range(p)]
        y_names[f] = ys
        for y in ys:
            bounds[y] = (-1.0, 1.0)
        objective[ys[0]] = objective.get(ys[0], 0.0) - req.lam * float(req.c[t])
        s_last = s_name(p - 1, int(x[p - 1]))
        binaries.add((p - 1, int(x[p - 1])))
        # y_p - 2 s = -1  <=>  y_p = theta_p
        constraints.append(LinearConstraint(f"link_{f}_{p}", {ys[p - 1]: 1.0, s_last: -2.0}, "=", -1.0))
        for k in range(p - 1):
            s = s_name(k, int(x[k]))
            binaries.add((k, int(x[k])))
            yk, yn = ys[k], ys[k + 1]
            tag = f"link_{f}_{k + 1}"
            # theta = 2 s - 1 substituted into the four product inequalities.
            constraints.append(LinearConstraint(tag + "_a", {yk: 1.0, s: 2.0, yn: 1.0}, ">=", 0.0))
            constraints.append(LinearConstraint(tag + "_b", {yk: 1.0, s: -2.0, yn: -1.0}, ">=", -2.0))
            constraints.append(LinearConstraint(tag + "_c", {yk: 1.0, s: -2.0, yn: 1.0}, "<=", 0.0))
            constraints.append(LinearConstraint(tag + "_d", {yk: 1.0, s: 2.0, yn: -1.0}, "<=", 2.0))
    return MilpModel(objective, constraints, bounds,
                     [s_name(k, j) for k, j in sorted(binaries)], y_names)


def _num(v: float) -> str:
    return format(float(v), ".17g")


def _linear(coefs: dict) -> str:
    parts = []
    for name, v in coefs.items():
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {_num(abs(v))} {name}")
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def write_lp(model: MilpModel) -> str:
    """Serialize a :class:`MilpModel` in CPLEX LP text format."""
    lines = ["\\ weak separation integer program", "Maximize", " obj:"]
    for name, v in model.objective.items():
        sign = "-" if v < 0 else "+"
        lines.append(f"   {sign} {_num(abs(v))} {name}")
    lines.append("Subject To")
    for con in model.constraints:
        lines.append(f" {con.name}: {_linear(con.coefs)} {con.sense} {_num(con.rhs)}")
    lines.append("Bounds")
    for name, (lo, hi) in model.bounds.items():
        if lo == hi:
            lines.append(f" {name} = {_num(lo)}")
        else:
            lines.append(f" {_num(lo)} <= {name} <= {_num(hi)}")
    lines.append("Binaries")
    for k in range(0, len(model.binaries), 8):
        lines.append(" " + " ".join(model.binaries[k:k + 8]))
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_milp(req: SeparationRequest, destination=None) -> str:
    """LP-format text of the separation program; also written to ``destination`` if given."""
    text = write_lp(build_milp(req))
    if destination is not None:
        with open(destination, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text
