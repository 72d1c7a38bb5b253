"""Command-line interface.

Subcommands ``gen``, ``solve``, ``eval``, ``oracle`` and ``bench``.  Exit
codes: 0 success, 2 usage, 3 I/O or format, 4 not converged, 5 oracle
inconclusive.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .bcg import SolverAborted, SolverConfig, gradient, solve
from .experiments import (
    ExperimentSpec,
    aggregates_csv,
    generate_truth,
    nmse,
    results_csv,
    run_benchmark,
    sample_observations,
)
from .gauge import AtomicModel
from .io import (
    FormatError,
    read_model_json,
    read_samples_csv,
    write_model_json,
    write_samples_csv,
    write_trace_jsonl,
)
from .separation import (
    NoSeparation,
    OracleInconclusive,
    SeparationRequest,
    export_milp,
    weak_separation_oracle,
)
from .tensor import Shape, materialize_dense

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NOT_CONVERGED = 4
EXIT_INCONCLUSIVE = 5

log = logging.getLogger("gaugetc")


class CliError(Exception):
    def __init__(self, message, code=EXIT_IO):
        super().__init__(message)
        self.code = code


def _shape(text: str) -> Shape:
    try:
        return Shape(int(t) for t in text.split(","))
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"invalid shape {text!r}: {err}") from None


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text) if text.lstrip("-").isdigit() else None
    if v is None or v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text!r}")
    return v


def _need_file(path):
    if not os.path.isfile(path):
        raise CliError(f"{path}: no such file")


def _need_dir_for(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise CliError(f"{path}: directory {parent} does not exist")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _add_solver_flags(p):
    p.add_argument("--lam", type=_positive_float, default=1.0, help="norm-ball radius")
    p.add_argument("--epsilon", type=_positive_float, default=1e-4, help="target gap")
    p.add_argument("--K", type=float, default=2.0, help="oracle accuracy (>= 1)")
    p.add_argument("--max-iter", type=_nonneg_int, default=2000)
    p.add_argument("--restarts", type=_nonneg_int, default=5, help="AM random restarts")
    p.add_argument("--passes", type=_positive_int, default=10, help="AM pass cap")
    p.add_argument("--node-budget", type=_positive_int, default=50_000_000,
                   help="branch-and-bound node cap per oracle call")
    p.add_argument("--on-inconclusive", choices=("step", "abort"), default="step",
                   help="when the node cap is hit: step toward the best vertex found, or abort")


def _solver_config(args) -> SolverConfig:
    try:
        return SolverConfig(lam=args.lam, epsilon=args.epsilon, K=args.K,
                            max_iterations=args.max_iter, am_restarts=args.restarts,
                            am_max_passes=args.passes, bnb_node_budget=args.node_budget,
                            on_inconclusive=args.on_inconclusive, seed=args.seed)
    except ValueError as err:
        raise CliError(str(err), EXIT_USAGE) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaugetc",
                                     description="Tensor completion with a sign-vertex gauge norm.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=_nonneg_int, default=0, help="random seed")
    parser.add_argument("--threads", type=_positive_int, default=1,
                        help="worker threads (bench only)")
    parser.add_argument("--verbose", "-v", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random truth and samples")
    p.add_argument("--shape", type=_shape, required=True, help="comma-separated sizes, e.g. 5,5,5")
    p.add_argument("--terms", type=_positive_int, required=True)
    p.add_argument("--n", type=_positive_int, required=True, help="number of samples")
    p.add_argument("--noise", type=_nonneg_float, default=0.0, help="Gaussian noise std")
    p.add_argument("--truth", default="truth.json", help="output model JSON")
    p.add_argument("--samples", default="samples.csv", help="output samples CSV")

    p = sub.add_parser("solve", help="fit a model to a samples CSV")
    p.add_argument("samples")
    p.add_argument("--shape", type=_shape, default=None)
    _add_solver_flags(p)
    p.add_argument("--model", default="model.json", help="output model JSON")
    p.add_argument("--trace", default="trace.jsonl", help="output JSON-lines trace")

    p = sub.add_parser("eval", help="NMSE of a model against a truth model")
    p.add_argument("model")
    p.add_argument("truth")
    p.add_argument("--metrics", default=None, help="also write a one-row metrics CSV")
    p.add_argument("--check-dense", action="store_true",
                   help="recompute the NMSE on the materialized tensors (small shapes only)")

    p = sub.add_parser("oracle", help="separation at the gradient of a model")
    p.add_argument("mode", choices=["solve", "export"])
    p.add_argument("samples")
    p.add_argument("--model", default=None, help="model JSON; the zero model when omitted")
    p.add_argument("--shape", type=_shape, default=None)
    p.add_argument("--lam", type=_positive_float, default=None,
                   help="radius; defaults to the model's, or 1")
    p.add_argument("--phi", type=_positive_float, default=1.0)
    p.add_argument("--K", type=float, default=2.0)
    p.add_argument("--restarts", type=_nonneg_int, default=5)
    p.add_argument("--passes", type=_positive_int, default=10)
    p.add_argument("--node-budget", type=_positive_int, default=50_000_000)
    p.add_argument("--lp", default="separation.lp", help="LP output path (export mode)")

    p = sub.add_parser("bench", help="run a benchmark spec")
    p.add_argument("spec", help="benchmark spec JSON")
    p.add_argument("--out", default=".", help="output directory")
    return parser


def cmd_gen(args) -> int:
    for path in (args.truth, args.samples):
        _need_dir_for(path)
    root = np.random.SeedSequence(args.seed)
    truth_ss, sample_ss = root.spawn(2)
    try:
        truth = generate_truth(args.shape, args.terms, np.random.default_rng(truth_ss))
    except ValueError as err:
        raise CliError(str(err), EXIT_USAGE) from None
    samples = sample_observations(truth, args.n, args.noise, np.random.default_rng(sample_ss))
    write_model_json(args.truth, truth)
    write_samples_csv(args.samples, samples)
    log.info("wrote %s (%d terms) and %s (%d samples)", args.truth, truth.n_terms, args.samples,
             samples.n)
    return EXIT_OK


def cmd_solve(args) -> int:
    _need_file(args.samples)
    for path in (args.model, args.trace):
        _need_dir_for(path)
    config = _solver_config(args)
    samples = read_samples_csv(args.samples, args.shape)

    def progress(rec):
        log.debug("%s", rec)

    try:
        model, diag = solve(samples, config, callback=progress)
        code = EXIT_OK if diag.converged else EXIT_NOT_CONVERGED
    except SolverAborted as err:
        model, diag = err.model, err.diagnostics
        log.error("aborted: %s", err)
        code = EXIT_INCONCLUSIVE
    write_model_json(args.model, model)
    write_trace_jsonl(args.trace, diag.records)
    summary = diag.summary()
    print(f"status={summary['status']} iterations={summary['iterations']} "
          f"terms={model.n_terms} objective={summary['final_objective']:.12g} "
          f"phi={diag.phi_trace[-1]:.6g}")
    return code


def cmd_eval(args) -> int:
    _need_file(args.model)
    _need_file(args.truth)
    if args.metrics:
        _need_dir_for(args.metrics)
    model = read_model_json(args.model)
    truth = read_model_json(args.truth)
    if model.shape != truth.shape:
        raise CliError(f"shape mismatch: model {model.shape.dims}, truth {truth.shape.dims}")
    score = nmse(model, truth)
    print(f"nmse {score:.12g}")
    dense = None
    if args.check_dense:
        try:
            a = materialize_dense(model, model.shape)
            b = materialize_dense(truth, truth.shape)
        except ValueError as err:
            raise CliError(str(err), EXIT_USAGE) from None
        dense = float(np.sum((a - b) ** 2) / np.sum(b * b))
        print(f"dense_nmse {dense:.12g}")
        print(f"abs_diff {abs(dense - score):.3g}")
    if args.metrics:
        row = f"nmse,{score!r}" + (f",{dense!r}" if dense is not None else "")
        head = "metric,value" + (",dense" if dense is not None else "")
        _write_text(args.metrics, head + "\n" + row + "\n")
    return EXIT_OK


def cmd_oracle(args) -> int:
    _need_file(args.samples)
    if args.model:
        _need_file(args.model)
    if args.mode == "export":
        _need_dir_for(args.lp)
    if not args.K >= 1:
        raise CliError(f"K must be at least 1, got {args.K}", EXIT_USAGE)
    model = read_model_json(args.model) if args.model else None
    samples = read_samples_csv(args.samples, args.shape or (model.shape if model else None))
    if model is None:
        model = AtomicModel.zero(samples.shape, args.lam or 1.0)
    if model.shape != samples.shape:
        raise CliError(f"shape mismatch: model {model.shape.dims}, samples {samples.shape.dims}")
    lam = args.lam or model.lam
    psi = model.entries(samples.unique)
    req = SeparationRequest(samples.shape, lam, samples.unique, gradient(psi, samples), psi,
                            args.phi, args.K)
    if args.mode == "export":
        export_milp(req, args.lp)
        print(f"wrote {args.lp} ({len(req.c)} support entries)")
        return EXIT_OK
    try:
        res = weak_separation_oracle(req, restarts=args.restarts, max_passes=args.passes,
                                     rng=np.random.default_rng(args.seed),
                                     node_budget=args.node_budget)
    except OracleInconclusive as err:
        print(f"Inconclusive: {err}")
        return EXIT_INCONCLUSIVE
    if isinstance(res, NoSeparation):
        print(f"NoSeparation bound={res.certified_bound:.12g}")
    else:
        print(f"Separated gap={res.gap:.12g} source={res.source}")
        print(json.dumps({"signs": [[int(s) for s in vec] for vec in res.vertex.signs]}))
    return EXIT_OK


def cmd_bench(args) -> int:
    _need_file(args.spec)
    if not os.path.isdir(args.out):
        raise CliError(f"{args.out}: output directory does not exist")
    try:
        spec = ExperimentSpec.from_json(args.spec)
    except json.JSONDecodeError as err:
        raise CliError(f"{args.spec}: {err}") from None
    except (TypeError, ValueError) as err:
        raise CliError(f"{args.spec}: {err}") from None
    result = run_benchmark(spec, threads=args.threads)
    _write_text(os.path.join(args.out, "results.csv"), results_csv(result.rows))
    _write_text(os.path.join(args.out, "aggregate.csv"), aggregates_csv(result.aggregates))
    for a in result.aggregates:
        print(f"{a['method']}: median nmse {a['nmse_median']:.6g} "
              f"({a['failures']} of {a['trials']} failed)")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "eval": cmd_eval, "oracle": cmd_oracle,
            "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except (FormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
