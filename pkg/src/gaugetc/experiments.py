"""Synthetic ground truth, baselines and replicated NMSE benchmarks."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .bcg import SolverConfig, solve
from .gauge import AtomicModel, SignVertex, canonicalize, cp_inner_product, model_inner_product
from .tensor import SampleSet, Shape, as_shape, check_indices

METHODS = ("gauge", "als", "naive")


class CPModel:
    """Tensor ``sum_r prod_k F_k[x_k, r]`` given by factor matrices ``F_k`` of shape ``(r_k, R)``."""

    def __init__(self, factors):
        self.factors = [np.asarray(f, dtype=float) for f in factors]
        self.shape = Shape(f.shape[0] for f in self.factors)
        ranks = {f.shape[1] for f in self.factors}
        if len(ranks) != 1:
            raise ValueError("factor matrices disagree on the rank")

    @classmethod
    def constant(cls, shape, value: float) -> "CPModel":
        shape = as_shape(shape)
        factors = [np.ones((r, 1)) for r in shape.dims]
        factors[0] = factors[0] * value
        return cls(factors)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    def entries(self, indices) -> np.ndarray:
        idx = check_indices(self.shape, indices)
        out = self.factors[0][idx[:, 0]].copy()
        for k in range(1, len(self.factors)):
            out *= self.factors[k][idx[:, k]]
        return out.sum(axis=1)

    def to_factors(self):
        return self.factors


def generate_truth(shape, terms: int = 10, seed=None) -> AtomicModel:
    """Random convex combination of ``terms`` distinct sign vertices, ``lam = 1``.

    Signs are i.i.d. uniform; duplicates (after canonicalization) are
    redrawn.  Weights are normalized exponentials, i.e. uniform on the
    simplex.
    """
    shape = as_shape(shape)
    if terms < 1:
        raise ValueError("terms must be at least 1")
    if shape.rho - shape.order + 1 < 63 and terms > 2 ** (shape.rho - shape.order + 1):
        raise ValueError(f"shape {shape.dims} has fewer than {terms} distinct vertices")
    rng = np.random.default_rng(seed)
    vertices: list[SignVertex] = []
    seen = set()
    while len(vertices) < terms:
        v = canonicalize(SignVertex([rng.choice(np.array([-1, 1], dtype=np.int8), size=r)
                                     for r in shape.dims]))
        if v not in seen:
            seen.add(v)
            vertices.append(v)
    w = rng.exponential(size=terms)
    return AtomicModel(shape, 1.0, w / w.sum(), vertices)


def sample_observations(truth, n: int, noise_std: float = 0.0, seed=None) -> SampleSet:
    """``n`` uniform indices drawn with replacement, with optional Gaussian noise."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    shape = truth.shape
    idx = np.stack([rng.integers(0, r, size=n) for r in shape.dims], axis=1)
    y = truth.entries(idx)
    if noise_std > 0:
        y = y + rng.normal(scale=noise_std, size=n)
    return SampleSet.from_arrays(shape, idx, y)


def _inner(a, b) -> float:
    if isinstance(a, AtomicModel) and isinstance(b, AtomicModel):
        return model_inner_product(a, b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape.dims} vs {b.shape.dims}")
    return cp_inner_product(a.to_factors(), b.to_factors())


def nmse(estimate, truth) -> float:
    """``||estimate - truth||_F**2 / ||truth||_F**2`` from factored inner products."""
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape.dims} vs {truth.shape.dims}")
    tt = _inner(truth, truth)
    if tt == 0:
        raise ValueError("the truth tensor is identically zero")
    ee = _inner(estimate, estimate)
    et = _inner(estimate, truth)
    return max((ee - 2 * et + tt) / tt, 0.0)


@dataclass
class ALSResult:
    model: CPModel
    objective_trace: list


def als_objective(factors, samples: SampleSet, l2_reg: float) -> float:
    pred = CPModel(factors).entries(samples.unique)
    r = pred - samples.means
    fit = (math.fsum(samples.counts * r * r) + samples.within_ss) / samples.n
    return fit + l2_reg * sum(float(np.sum(f * f)) for f in factors)


def als_baseline(samples: SampleSet, rank: int = 10, l2_reg: float = 1e-3,
                 iterations: int = 100, seed=None, tol: float = 1e-10) -> ALSResult:
    """Observed-entry CP alternating least squares with an L2 penalty.

    Minimizes ``(1/n) sum_i (y_i - model_{x_i})**2 + l2_reg * sum_k ||F_k||_F**2``
    one factor matrix at a time; every row subproblem is a ridge
    regression, so each full cycle does not increase the objective.
    """
    if rank < 1:
        raise ValueError("rank must be at least 1")
    if not l2_reg > 0:
        raise ValueError("l2_reg must be positive")
    rng = np.random.default_rng(seed)
    shape = samples.shape
    U, m, ybar = samples.unique, samples.counts.astype(float), samples.means
    factors = [rng.normal(size=(r, rank)) / math.sqrt(rank) for r in shape.dims]
    trace = [als_objective(factors, samples, l2_reg)]
    ridge = samples.n * l2_reg * np.eye(rank)
    for _ in range(iterations):
        for k, r in enumerate(shape.dims):
            Z = np.ones((len(U), rank))
            for l, f in enumerate(factors):
                if l != k:
                    Z *= f[U[:, l]]
            gram = np.zeros((r, rank, rank))
            np.add.at(gram, U[:, k], m[:, None, None] * Z[:, :, None] * Z[:, None, :])
            rhs = np.zeros((r, rank))
            np.add.at(rhs, U[:, k], (m * ybar)[:, None] * Z)
            factors[k] = np.linalg.solve(gram + ridge, rhs[:, :, None])[:, :, 0]
        trace.append(als_objective(factors, samples, l2_reg))
        if abs(trace[-2] - trace[-1]) <= tol * max(1.0, abs(trace[-2])):
            break
    return ALSResult(CPModel(factors), trace)


@dataclass
class ExperimentSpec:
    shape: tuple
    terms: int = 10
    n: int = 1000
    noise_std: float = 0.0
    replicates: int = 10
    seeds: list | None = None
    base_seed: int = 0
    methods: tuple = METHODS
    solver: dict = field(default_factory=dict)
    als: dict = field(default_factory=lambda: {"rank": None, "l2_reg": [1e-4, 1e-3, 1e-2, 1e-1],
                                               "iterations": 200})
    timing: bool = True

    def __post_init__(self):
        self.shape = tuple(int(r) for r in self.shape)
        Shape(self.shape)
        if self.terms < 1:
            raise ValueError("terms must be at least 1")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.seeds is None:
            self.seeds = [self.base_seed + i for i in range(self.replicates)]
        self.seeds = [int(s) for s in self.seeds]
        self.replicates = len(self.seeds)
        self.methods = tuple(self.methods)
        SolverConfig(**self.solver)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown benchmark spec keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TrialResult:
    trial: int
    seed: int
    method: str
    nmse: float
    seconds: float
    iterations: int = 0
    oracle_calls: int = 0
    error: str = ""


RESULT_COLUMNS = ["trial", "seed", "method", "nmse", "seconds", "iterations", "oracle_calls", "error"]
AGGREGATE_COLUMNS = ["method", "trials", "failures", "nmse_mean", "nmse_median", "nmse_std",
                     "seconds_mean"]


def _run_method(method, spec, truth, samples, solver_seed):
    if method == "naive":
        est = CPModel.constant(truth.shape, float(np.mean(samples.values)))
        return nmse(est, truth), 0, 0
    if method == "als":
        cfg = dict(spec.als)
        rank = cfg.get("rank") or spec.terms
        regs = cfg.get("l2_reg", 1e-3)
        regs = regs if isinstance(regs, (list, tuple)) else [regs]
        # The regularizer is picked with the truth in hand, as favorable to ALS as possible.
        best = None
        for reg in regs:
            res = als_baseline(samples, rank=rank, l2_reg=reg, iterations=cfg.get("iterations", 200),
                               seed=solver_seed)
            score = nmse(res.model, truth)
            if best is None or score < best[0]:
                best = (score, len(res.objective_trace) - 1)
        return best[0], best[1], 0
    cfg = {"lam": truth.lam, **spec.solver, "seed": solver_seed}
    model, diag = solve(samples, SolverConfig(**cfg))
    if not diag.converged:
        raise RuntimeError(f"solver did not converge in {diag.iterations} iterations")
    return nmse(model, truth), diag.iterations, diag.oracle_calls


def run_trial(spec: ExperimentSpec, trial: int) -> list[TrialResult]:
    seed = spec.seeds[trial]
    truth_ss, sample_ss, solver_ss = np.random.SeedSequence(seed).spawn(3)
    truth = generate_truth(spec.shape, spec.terms, np.random.default_rng(truth_ss))
    samples = sample_observations(truth, spec.n, spec.noise_std, np.random.default_rng(sample_ss))
    solver_seed = int(solver_ss.generate_state(1)[0])
    methods = list(spec.methods) + ([] if "naive" in spec.methods else ["naive"])
    rows = []
    for method in methods:
        tic = time.perf_counter()
        try:
            score, iters, calls = _run_method(method, spec, truth, samples, solver_seed)
            err = ""
        except Exception as exc:  # recorded per trial; the benchmark continues
            score, iters, calls, err = math.nan, 0, 0, f"{type(exc).__name__}: {exc}"
        seconds = time.perf_counter() - tic if spec.timing else 0.0
        rows.append(TrialResult(trial, seed, method, score, seconds, iters, calls, err))
    return rows


def aggregate(rows: list[TrialResult]) -> list[dict]:
    out = []
    for method in dict.fromkeys(r.method for r in rows):
        mine = [r for r in rows if r.method == method]
        ok = [r.nmse for r in mine if not r.error]
        out.append({
            "method": method,
            "trials": len(mine),
            "failures": len(mine) - len(ok),
            "nmse_mean": float(np.mean(ok)) if ok else math.nan,
            "nmse_median": float(np.median(ok)) if ok else math.nan,
            "nmse_std": float(np.std(ok)) if ok else math.nan,
            "seconds_mean": float(np.mean([r.seconds for r in mine])),
        })
    return out


@dataclass
class BenchmarkResult:
    rows: list
    aggregates: list

    def median(self, method: str) -> float:
        return next(a["nmse_median"] for a in self.aggregates if a["method"] == method)


def run_benchmark(spec: ExperimentSpec, threads: int = 1) -> BenchmarkResult:
    """Run every replicate and method; failed trials are recorded, not raised."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda t: run_trial(spec, t), range(spec.replicates)))
    else:
        chunks = [run_trial(spec, t) for t in range(spec.replicates)]
    rows = [r for chunk in chunks for r in chunk]
    return BenchmarkResult(rows, aggregate(rows))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def results_csv(rows: list[TrialResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def aggregates_csv(aggregates: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for a in aggregates:
        w.writerow([_fmt(a[c]) for c in AGGREGATE_COLUMNS])
    return buf.getvalue()


def read_results_csv(text: str) -> list[TrialResult]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(TrialResult(int(rec["trial"]), int(rec["seed"]), rec["method"],
                                float(rec["nmse"]), float(rec["seconds"]), int(rec["iterations"]),
                                int(rec["oracle_calls"]), rec["error"]))
    return rows
