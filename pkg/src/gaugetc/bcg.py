"""Blended conditional gradients for gauge-constrained least squares.

Minimizes ``(1/n) sum_i (y_i - psi_{x_i})**2`` over ``||psi|| <= lam``.  The
iterate is only stored on the distinct observed indices ``U`` as a convex
combination of sign vertices; the full tensor exists only as the returned
:class:`~gaugetc.gauge.AtomicModel`.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .gauge import AtomicModel, SignVertex, canonicalize, vertex_project
from .separation import (
    OracleInconclusive,
    SeparationRequest,
    Separated,
    alternating_max,
    exact_branch_and_bound,
    random_vertex,
    separation_gap,
    weak_separation_oracle,
)
from .tensor import SampleSet

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    """Solver settings.

    ``epsilon`` is the target Frank-Wolfe gap: the solver stops once a
    certificate shows that no vertex improves the linearized objective by
    more than ``epsilon``.  ``certify_at_phi`` lets the exact search
    discard subtrees whose bound is already below the current gap
    estimate instead of proving the exact optimum.

    ``on_inconclusive`` decides what happens when the exact search runs
    out of nodes: ``"step"`` takes a Frank-Wolfe step toward the best
    vertex found if its gap is positive (the step still decreases the
    objective, only with a weaker accuracy than ``K``), ``"abort"``
    raises :class:`SolverAborted`.  Convergence is only ever declared
    from an exhausted search.
    """

    lam: float = 1.0
    epsilon: float = 1e-4
    K: float = 2.0
    max_iterations: int = 2000
    am_restarts: int = 5
    am_max_passes: int = 10
    bnb_node_budget: int | None = 50_000_000
    init_node_budget: int = 200_000
    seed: int = 0
    certify_at_phi: bool = True
    weight_floor: float = 1e-14
    on_inconclusive: str = "step"

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.K >= 1:
            raise ValueError(f"K must be at least 1, got {self.K}")
        if self.max_iterations < 0 or self.am_restarts < 0 or self.am_max_passes < 1:
            raise ValueError("iteration counts must be nonnegative (passes at least 1)")
        if self.on_inconclusive not in ("step", "abort"):
            raise ValueError(f"on_inconclusive must be 'step' or 'abort', got {self.on_inconclusive!r}")

    @property
    def phi_floor(self) -> float:
        return self.epsilon / 2


class ActiveSet:
    """Vertices with cached projections on ``U`` and convex weights."""

    def __init__(self, indices: np.ndarray):
        self.indices = indices
        self.vertices: list[SignVertex] = []
        self.proj = np.zeros((0, len(indices)))
        self.weights = np.zeros(0)
        self._pos: dict[SignVertex, int] = {}

    def __len__(self):
        return len(self.vertices)

    def position(self, v: SignVertex) -> int | None:
        return self._pos.get(canonicalize(v))

    def add(self, v: SignVertex, weight: float = 0.0) -> int:
        """Insert ``v`` (or find its existing entry) and add ``weight`` to it."""
        v = canonicalize(v)
        k = self._pos.get(v)
        if k is None:
            k = len(self.vertices)
            self.vertices.append(v)
            self._pos[v] = k
            self.proj = np.vstack([self.proj, vertex_project(v, self.indices).astype(float)])
            self.weights = np.append(self.weights, 0.0)
        self.weights[k] += weight
        return k

    def prune(self, floor: float):
        """Drop vertices with weight at most ``floor`` and renormalize to sum one."""
        keep = self.weights > floor
        if not keep.all():
            self.vertices = [v for v, k in zip(self.vertices, keep) if k]
            self.proj = self.proj[keep]
            self.weights = self.weights[keep]
            self._pos = {v: i for i, v in enumerate(self.vertices)}
        self.weights = self.weights / math.fsum(self.weights)

    def iterate(self, lam: float) -> np.ndarray:
        return lam * (self.weights @ self.proj)

    def to_model(self, shape, lam: float) -> AtomicModel:
        return AtomicModel(shape, lam, self.weights.copy(), list(self.vertices))


@dataclass
class SolverState:
    psi: np.ndarray
    phi: float
    active: ActiveSet
    objective: float
    iteration: int = 0
    oracle_calls: int = 0


@dataclass
class Diagnostics:
    iterations: int = 0
    oracle_calls: int = 0
    heuristic_separations: int = 0
    exact_separations: int = 0
    certificates: int = 0
    bnb_nodes: int = 0
    local_steps: int = 0
    global_steps: int = 0
    fallback_steps: int = 0
    worst_accuracy: float = 1.0
    converged: bool = False
    status: str = "running"
    certified_gap: float = math.inf
    certified_phi: float = math.inf
    initial_gap: float = math.nan
    phi_trace: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    records: list = field(default_factory=list)
    seconds: float = 0.0

    def summary(self) -> dict:
        return {
            "status": self.status,
            "converged": self.converged,
            "iterations": self.iterations,
            "oracle_calls": self.oracle_calls,
            "heuristic_separations": self.heuristic_separations,
            "exact_separations": self.exact_separations,
            "certificates": self.certificates,
            "bnb_nodes": self.bnb_nodes,
            "local_steps": self.local_steps,
            "global_steps": self.global_steps,
            "fallback_steps": self.fallback_steps,
            "worst_accuracy": self.worst_accuracy,
            "certified_gap": self.certified_gap,
            "certified_phi": self.certified_phi,
            "final_objective": self.objective_trace[-1] if self.objective_trace else math.nan,
            "seconds": self.seconds,
        }


class SolverAborted(RuntimeError):
    """The oracle could not reach a verdict; carries the partial result."""

    def __init__(self, message, model: AtomicModel, diagnostics: Diagnostics):
        super().__init__(message)
        self.model = model
        self.diagnostics = diagnostics


def objective(psi: np.ndarray, samples: SampleSet) -> float:
    """Mean squared error over all samples, from per-index aggregates."""
    r = psi - samples.means
    return (math.fsum(samples.counts * r * r) + samples.within_ss) / samples.n


def gradient(psi: np.ndarray, samples: SampleSet) -> np.ndarray:
    """Gradient of :func:`objective` on ``U`` (it vanishes off ``U``)."""
    return (2.0 / samples.n) * samples.counts * (psi - samples.means)


def line_search(psi: np.ndarray, direction: np.ndarray, samples: SampleSet,
                t_max: float = 1.0) -> float:
    """Exact minimizer of the objective along ``psi + t * direction``, ``t in [0, t_max]``."""
    denom = math.fsum(samples.counts * direction * direction)
    if denom == 0:
        raise ValueError("direction vanishes on the observed indices")
    num = -math.fsum(samples.counts * (psi - samples.means) * direction)
    return min(max(num / denom, 0.0), t_max)


def _toward_away(state: SolverState, g: np.ndarray) -> tuple[int, int, np.ndarray]:
    scores = state.active.proj @ g
    keys = [v.sort_key() for v in state.active.vertices]
    s = min(range(len(scores)), key=lambda i: (scores[i], keys[i]))
    u = max(range(len(scores)), key=lambda i: (scores[i], [-k for k in keys[i]]))
    return s, u, scores


def local_gap(state: SolverState, samples: SampleSet, lam: float) -> float:
    """Pairwise gap ``<g, lam * (u - s)>`` between the away and toward vertices."""
    if len(state.active) < 2:
        return 0.0
    g = gradient(state.psi, samples)
    s, u, scores = _toward_away(state, g)
    return max(lam * (scores[u] - scores[s]), 0.0)


def local_step(state: SolverState, samples: SampleSet, config: SolverConfig) -> bool:
    """Pairwise step moving weight from the away vertex to the toward vertex.

    Returns ``True`` if the weights changed.
    """
    active = state.active
    if len(active) < 2:
        return False
    g = gradient(state.psi, samples)
    s, u, _ = _toward_away(state, g)
    if s == u:
        return False
    d = config.lam * (active.proj[s] - active.proj[u])
    if not np.any(d):
        return False
    t = line_search(state.psi, d, samples, t_max=active.weights[u])
    if t <= 0:
        return False
    if t >= active.weights[u]:
        t = active.weights[u]
        active.weights[s] += t
        active.weights[u] = 0.0
    else:
        active.weights[s] += t
        active.weights[u] -= t
    active.prune(config.weight_floor)
    state.psi = active.iterate(config.lam)
    state.objective = objective(state.psi, samples)
    return True


def frank_wolfe_step(state: SolverState, v: SignVertex, samples: SampleSet,
                     config: SolverConfig) -> float:
    active = state.active
    target = config.lam * vertex_project(v, active.indices).astype(float)
    d = target - state.psi
    t = line_search(state.psi, d, samples, t_max=1.0)
    if t >= 1.0:
        active.weights[:] = 0.0
        active.add(v, 1.0)
    else:
        active.weights *= 1.0 - t
        active.add(v, t)
    active.prune(config.weight_floor)
    state.psi = active.iterate(config.lam)
    state.objective = objective(state.psi, samples)
    return t


def _request(samples, config, psi, g, phi) -> SeparationRequest:
    return SeparationRequest(samples.shape, config.lam, samples.unique, g, psi, phi, config.K)


def _best_heuristic(req, rng, config, incumbents=()) -> tuple[float, SignVertex]:
    starts = list(incumbents) + [SignVertex.ones(req.shape)]
    starts += [random_vertex(req.shape, rng) for _ in range(config.am_restarts)]
    best = None
    for s in starts:
        v = canonicalize(alternating_max(req, s, max_passes=config.am_max_passes))
        gap = separation_gap(req, v)
        if best is None or gap > best[0] or (gap == best[0] and v.sort_key() < best[1].sort_key()):
            best = (gap, v)
    return best


def _initial_vertex(samples, config, rng) -> SignVertex:
    psi0 = np.zeros(samples.n_unique)
    req = _request(samples, config, psi0, gradient(psi0, samples), 1.0)
    _, v = _best_heuristic(req, rng, config)
    if len(req.c) == 0:
        return v
    res = exact_branch_and_bound(req, node_budget=config.init_node_budget, incumbent=v)
    return res.best


def solve(samples: SampleSet, config: SolverConfig | None = None,
          callback=None) -> tuple[AtomicModel, Diagnostics]:
    """Fit an atomic model to ``samples`` under ``||psi|| <= config.lam``.

    Each iteration takes a pairwise step inside the active set when its
    gap is at least the estimate ``phi``; otherwise it asks the weak
    separation oracle for a new vertex, and halves ``phi`` when the oracle
    certifies that none exists.  The run converges once a certificate is
    obtained with ``phi <= epsilon``, which bounds the Frank-Wolfe gap of
    the returned model by ``epsilon``.

    ``callback(record)`` is called with every per-iteration trace record.

    Raises
    ------
    SolverAborted
        If an oracle call is inconclusive within its node budget and
        ``on_inconclusive`` is ``"abort"`` or no vertex with a positive
        gap was found.
    """
    config = config or SolverConfig()
    rng = np.random.default_rng(config.seed)
    start = time.perf_counter()
    diag = Diagnostics()

    active = ActiveSet(samples.unique)
    active.add(_initial_vertex(samples, config, rng), 1.0)
    psi = active.iterate(config.lam)
    state = SolverState(psi, 0.0, active, objective(psi, samples))
    g = gradient(psi, samples)
    g0, _ = _best_heuristic(_request(samples, config, psi, g, 1.0), rng, config, active.vertices)
    diag.initial_gap = g0
    state.phi = max(g0, config.epsilon) / 2
    diag.objective_trace.append(state.objective)
    diag.phi_trace.append(state.phi)

    def record(phase, oracle_seconds=0.0):
        rec = {
            "iteration": state.iteration,
            "phase": phase,
            "objective": state.objective,
            "Phi": state.phi,
            "active_set_size": len(state.active),
            "oracle_seconds": oracle_seconds,
        }
        diag.records.append(rec)
        diag.objective_trace.append(state.objective)
        diag.phi_trace.append(state.phi)
        if callback is not None:
            callback(rec)

    stats: dict = {}
    while state.iteration < config.max_iterations:
        state.iteration += 1
        g = gradient(state.psi, samples)
        if len(active) >= 2 and local_gap(state, samples, config.lam) >= state.phi:
            local_step(state, samples, config)
            diag.local_steps += 1
            record("local")
            continue

        s_idx = _toward_away(state, g)[0]
        req = _request(samples, config, state.psi, g, state.phi)
        tic = time.perf_counter()
        try:
            res = weak_separation_oracle(
                req, incumbents=[active.vertices[s_idx]], restarts=config.am_restarts,
                max_passes=config.am_max_passes, rng=rng, node_budget=config.bnb_node_budget,
                certify_at_phi=config.certify_at_phi, stats=stats,
            )
        except OracleInconclusive as err:
            if config.on_inconclusive == "step" and err.vertex is not None and err.gap > 0:
                toc = time.perf_counter() - tic
                state.oracle_calls += 1
                frank_wolfe_step(state, err.vertex, samples, config)
                diag.fallback_steps += 1
                diag.worst_accuracy = max(diag.worst_accuracy, state.phi / err.gap)
                record("fallback", toc)
                continue
            diag.status = "aborted"
            diag.iterations = state.iteration
            _collect(diag, stats, state, start)
            raise SolverAborted(str(err), active.to_model(samples.shape, config.lam), diag) from err
        toc = time.perf_counter() - tic
        state.oracle_calls += 1

        if isinstance(res, Separated):
            frank_wolfe_step(state, res.vertex, samples, config)
            diag.global_steps += 1
            diag.worst_accuracy = max(diag.worst_accuracy, state.phi / res.gap)
            record("global", toc)
        else:
            diag.certified_gap = res.certified_bound
            diag.certified_phi = certified_phi = state.phi
            state.phi /= 2
            record("halve", toc)
            if certified_phi <= config.epsilon:
                diag.converged = True
                break
        logger.debug("iteration %d objective %.6g phi %.3g", state.iteration, state.objective, state.phi)

    diag.status = "converged" if diag.converged else "max_iterations"
    diag.iterations = state.iteration
    _collect(diag, stats, state, start)
    return active.to_model(samples.shape, config.lam), diag


def _collect(diag, stats, state, start):
    diag.oracle_calls = state.oracle_calls
    diag.heuristic_separations = stats.get("heuristic", 0)
    diag.exact_separations = stats.get("exact", 0)
    diag.certificates = stats.get("certified", 0)
    diag.bnb_nodes = stats.get("nodes", 0)
    diag.seconds = time.perf_counter() - start
