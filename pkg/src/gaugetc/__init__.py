"""Low-rank tensor completion with a gauge norm over rank-1 sign tensors."""
from .bcg import Diagnostics, SolverAborted, SolverConfig, solve
from .estimator import ALSTensorCompleter, GaugeTensorCompleter
from .experiments import (
    CPModel,
    ExperimentSpec,
    als_baseline,
    generate_truth,
    nmse,
    run_benchmark,
    sample_observations,
)
from .gauge import AtomicModel, SignVertex, canonicalize, tiny_norm_oracle
from .separation import (
    NoSeparation,
    OracleInconclusive,
    Separated,
    SeparationRequest,
    alternating_max,
    exact_branch_and_bound,
    export_milp,
    weak_separation_oracle,
)
from .tensor import SampleSet, Shape, ingest_samples

__version__ = "0.1.0"

__all__ = [
    "ALSTensorCompleter", "AtomicModel", "CPModel", "Diagnostics", "ExperimentSpec",
    "GaugeTensorCompleter", "NoSeparation", "OracleInconclusive", "SampleSet", "Separated",
    "SeparationRequest", "Shape", "SignVertex", "SolverAborted", "SolverConfig",
    "alternating_max", "als_baseline", "canonicalize", "exact_branch_and_bound", "export_milp",
    "generate_truth", "ingest_samples", "nmse", "run_benchmark", "sample_observations", "solve",
    "tiny_norm_oracle", "weak_separation_oracle",
]
