"""Scikit-learn style estimators.

``X`` is an ``(n, p)`` array of zero-based entry indices and ``y`` the
observed values, so a completed tensor is just a regressor over indices
and composes with pipelines, ``clone`` and model selection.
"""
from __future__ import annotations

from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_index_array, check_index_data, seed_from
from .bcg import SolverConfig, solve
from .experiments import als_baseline
from .tensor import SampleSet


class GaugeTensorCompleter(RegressorMixin, BaseEstimator):
    """Least-squares tensor completion under a sign-vertex gauge-norm ball.

    Parameters
    ----------
    lam : float, default=1.0
        Radius of the norm ball.
    shape : tuple of int, optional
        Tensor shape; inferred from the largest index per mode when omitted.
    epsilon : float, default=1e-4
        Target Frank-Wolfe gap.
    K : float, default=2.0
        Accuracy of the weak separation oracle.
    max_iter : int, default=2000
    am_restarts, am_max_passes : int
        Random restarts and pass cap of the alternating-maximization heuristic.
    node_budget : int or None
        Node cap of one exact branch-and-bound run.
    certify_at_phi : bool, default=True
        Let the exact search stop proving once its bound is below the gap estimate.
    random_state : int, RandomState or None

    Attributes
    ----------
    model_ : AtomicModel
        Fitted convex combination of sign vertices.
    diagnostics_ : Diagnostics
    converged_ : bool
    n_iter_ : int
    shape_ : Shape
    """

    def __init__(self, lam=1.0, shape=None, epsilon=1e-4, K=2.0, max_iter=2000, am_restarts=5,
                 am_max_passes=10, node_budget=50_000_000, certify_at_phi=True, random_state=None):
        self.lam = lam
        self.shape = shape
        self.epsilon = epsilon
        self.K = K
        self.max_iter = max_iter
        self.am_restarts = am_restarts
        self.am_max_passes = am_max_passes
        self.node_budget = node_budget
        self.certify_at_phi = certify_at_phi
        self.random_state = random_state

    def _config(self) -> SolverConfig:
        return SolverConfig(
            lam=self.lam, epsilon=self.epsilon, K=self.K, max_iterations=self.max_iter,
            am_restarts=self.am_restarts, am_max_passes=self.am_max_passes,
            bnb_node_budget=self.node_budget, seed=seed_from(self.random_state),
            certify_at_phi=self.certify_at_phi,
        )

    def fit(self, X, y):
        X, y, shape = check_index_data(X, y, self.shape)
        config = self._config()
        samples = SampleSet.from_arrays(shape, X, y)
        self.model_, self.diagnostics_ = solve(samples, config)
        self.shape_ = shape
        self.n_features_in_ = shape.order
        self.converged_ = self.diagnostics_.converged
        self.n_iter_ = self.diagnostics_.iterations
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X, _ = check_index_array(X, self.shape_)
        return self.model_.entries(X)


class ALSTensorCompleter(RegressorMixin, BaseEstimator):
    """CP alternating least squares on observed entries, with an L2 penalty.

    Parameters
    ----------
    rank : int, default=10
    l2_reg : float, default=1e-3
    max_iter : int, default=200
        Full sweeps over the modes.
    shape : tuple of int, optional
    random_state : int, RandomState or None
    """

    def __init__(self, rank=10, l2_reg=1e-3, max_iter=200, shape=None, random_state=None):
        self.rank = rank
        self.l2_reg = l2_reg
        self.max_iter = max_iter
        self.shape = shape
        self.random_state = random_state

    def fit(self, X, y):
        X, y, shape = check_index_data(X, y, self.shape)
        samples = SampleSet.from_arrays(shape, X, y)
        res = als_baseline(samples, rank=self.rank, l2_reg=self.l2_reg, iterations=self.max_iter,
                           seed=seed_from(self.random_state))
        self.model_ = res.model
        self.objective_trace_ = res.objective_trace
        self.shape_ = shape
        self.n_features_in_ = shape.order
        self.n_iter_ = len(res.objective_trace) - 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X, _ = check_index_array(X, self.shape_)
        return self.model_.entries(X)
