"""Sparse maximum-likelihood estimation.

Agent ``i`` holds the log-likelihood ``log p(phi_i | x)`` of its own data;
the network computes

    maximize  sum_i log p(phi_i | x) - lam ||x||_1   over  x in K,

which is solved here as the minimization of the negated objective.
"""

import numpy as np

from .._validation import check_positive_int, check_rng
from ..problem import (
    DistributedProblem,
    FunctionCost,
    L1Regularizer,
    LeastSquaresCost,
    RealSpace,
    SmoothLocalCost,
    gradient_check,
    sample_feasible,
)
from ..surrogate import KeepConvexSurrogate, LinearizedSurrogate


class NegatedLogLikelihood(SmoothLocalCost):
    """``-log p(phi | x)`` from an oracle exposing ``value`` and ``gradient``
    of the log-likelihood."""

    def __init__(self, oracle, dim):
        super().__init__(dim)
        self.oracle = oracle

    def value(self, x):
        return -float(self.oracle.value(x))

    def gradient(self, x):
        return -np.asarray(self.oracle.gradient(x), dtype=float)


def build_sparse_ml(oracles, lam, feasible=None, tau=1.0, check_points=5, seed=0):
    """Problem with one agent per log-likelihood oracle and ``G = lam ||x||_1``.

    Each oracle needs ``dim``, ``value`` and ``gradient``. Gradients are
    checked against finite differences at ``check_points`` points of ``K``
    (set it to 0 to skip). Costs that are already least-squares objects keep
    their quadratic structure.
    """
    oracles = list(oracles)
    if not oracles:
        raise ValueError("need at least one log-likelihood")
    dim = oracles[0].dim
    feasible = RealSpace(dim) if feasible is None else feasible
    costs = [o if isinstance(o, SmoothLocalCost) and getattr(o, "negated", False)
             else NegatedLogLikelihood(o, dim) for o in oracles]
    if check_points:
        pts = sample_feasible(feasible, check_points, check_rng(seed))
        for c in costs:
            gradient_check(c, pts)
    problem = DistributedProblem(
        costs,
        L1Regularizer(lam, dim),
        feasible,
        surrogates={
            "structured": lambda i, t: (KeepConvexSurrogate(costs[i], t)
                                        if costs[i].quadratic_form() is not None
                                        else LinearizedSurrogate(costs[i], t)),
            "linearize": lambda i, t: LinearizedSurrogate(costs[i], t),
        },
        name="sparse_ml",
    )
    problem.default_tau = tau
    return problem


class GaussianLinearModel:
    """Log-likelihood of ``phi = B x + noise`` with white Gaussian noise of
    variance ``sigma2`` (up to an additive constant)."""

    def __init__(self, B, phi, sigma2=0.5):
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.phi = np.asarray(phi, dtype=float)
        self.sigma2 = float(sigma2)
        self.dim = self.B.shape[1]

    def value(self, x):
        r = self.phi - self.B @ x
        return -float(r @ r) / (2.0 * self.sigma2)

    def gradient(self, x):
        return self.B.T @ (self.phi - self.B @ x) / self.sigma2


class NegatedGaussianModel(LeastSquaresCost):
    """The negated Gaussian log-likelihood as an explicit quadratic, so the
    keep-convex surrogate can use the active-set solver."""

    negated = True

    def __init__(self, model):
        scale = 1.0 / np.sqrt(2.0 * model.sigma2)
        super().__init__(scale * model.B, scale * model.phi)


def gaussian_sparse_ml(I=5, dim=10, rows=8, sparsity=3, lam=0.5, noise=0.1, seed=0,
                       feasible=None, quadratic=True):
    """Linear-Gaussian instance (a distributed LASSO) with a sparse truth.

    Returns ``(problem, truth)``.
    """
    I = check_positive_int(I, "I")
    rng = check_rng(seed)
    truth = np.zeros(dim)
    support = rng.choice(dim, size=min(sparsity, dim), replace=False)
    truth[support] = rng.choice([-1.0, 1.0], size=support.size) * rng.uniform(0.5, 1.5, support.size)
    models = []
    for _ in range(I):
        B = rng.standard_normal((rows, dim))
        models.append(GaussianLinearModel(B, B @ truth + noise * rng.standard_normal(rows)))
    oracles = [NegatedGaussianModel(m) for m in models] if quadratic else models
    problem = build_sparse_ml(oracles, lam, feasible)
    problem.truth = truth
    problem.models = models
    return problem, truth


def flat_likelihood(dim):
    """Log-likelihood that carries no information about ``x``."""
    return FunctionCost(dim, lambda x: 0.0, lambda x: np.zeros(dim))
