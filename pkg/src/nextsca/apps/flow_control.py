"""Sigmoid-utility flow control over a shared network.

Source ``i`` sends at rate ``x_i`` over the links of its path and gets the
utility ``sigmoid(alpha_i x_i + beta_i)``. The sources maximize the total
utility subject to link capacities and per-source rate bounds. As a
minimization problem agent ``i`` owns ``f_i(x) = -sigmoid(alpha_i x_i + beta_i)``
and every agent knows the coupled feasible set.

The sigmoid is a difference of convex functions of ``u = alpha x + beta``:

    sigmoid(u) = h(u) - g(u),   h(u) = exp(u),   g(u) = exp(2u) / (1 + exp(u)),

so ``f_i = g - h`` keeps ``g`` as the convex part and ``h`` as the part that
the surrogate linearizes.
"""

from dataclasses import dataclass

import numpy as np

from .._validation import check_positive_int, check_rng
from ..problem import DCCost, DistributedProblem, Polyhedron, SmoothLocalCost
from ..surrogate import DCSurrogate, LinearizedSurrogate

DEFAULT_TAU = 1.0


def sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def dc_convex_part(u):
    """``g(u) = exp(2u) / (1 + exp(u)) = exp(u) - sigmoid(u)``."""
    return np.exp(u) * sigmoid(u)


def dc_linearized_part(u):
    """``h(u) = exp(u)``."""
    return np.exp(u)


class RateTermCost(SmoothLocalCost):
    """``phi(alpha x[index] + beta)`` for a smooth scalar ``phi`` given with its
    first two derivatives."""

    def __init__(self, dim, index, alpha, beta, phi, d1, d2):
        super().__init__(dim)
        self.index = int(index)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self._phi, self._d1, self._d2 = phi, d1, d2

    def _u(self, x):
        return self.alpha * x[self.index] + self.beta

    def value(self, x):
        return float(self._phi(self._u(x)))

    def gradient(self, x):
        g = np.zeros(self.dim)
        g[self.index] = self.alpha * self._d1(self._u(x))
        return g

    def hessian(self, x):
        H = np.zeros((self.dim, self.dim))
        H[self.index, self.index] = self.alpha ** 2 * self._d2(self._u(x))
        return H


def _g_d1(u):
    s = sigmoid(u)
    return np.exp(u) - s * (1.0 - s)


def _g_d2(u):
    s = sigmoid(u)
    return np.exp(u) - s * (1.0 - s) * (1.0 - 2.0 * s)


def utility_cost(dim, index, alpha, beta):
    """``-sigmoid(alpha x[index] + beta)`` as ``g - h``."""
    convex = RateTermCost(dim, index, alpha, beta, dc_convex_part, _g_d1, _g_d2)
    linearized = RateTermCost(dim, index, alpha, beta, np.exp, np.exp, np.exp)
    return DCCost(convex, linearized)


@dataclass
class FlowControlInstance:
    capacities: np.ndarray
    routing: np.ndarray  # routing[l, i] = 1 when source i uses link l
    lower: np.ndarray
    upper: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def n_sources(self):
        return self.routing.shape[1]

    def check_feasible(self):
        """Raise unless the minimum rates fit every link."""
        load = self.routing @ self.lower
        over = np.flatnonzero(load > self.capacities + 1e-12)
        if over.size:
            l = int(over[0])
            raise ValueError(f"infeasible capacities: link {l} carries {load[l]:.6g} at minimum "
                             f"rates but has capacity {self.capacities[l]:.6g}")

    def total_utility(self, x):
        return float(np.sum(sigmoid(self.alpha * np.asarray(x) + self.beta)))


def _routing(paths, n_links, n_sources):
    R = np.zeros((n_links, n_sources))
    for i, path in enumerate(paths):
        for l in path:
            if not 0 <= l < n_links:
                raise ValueError(f"source {i} uses unknown link {l}")
            R[l, i] = 1.0
    return R


def build_flow_control(capacities, paths, lower, upper, alpha, beta, tau=DEFAULT_TAU):
    """Flow-control problem with one agent per source.

    ``paths[i]`` lists the (0-based) links of source ``i``; rates are bounded
    by ``lower[i] <= x_i <= upper[i]``. The ``"structured"`` surrogate keeps
    ``g`` and linearizes ``h``; ``"linearize"`` is also registered.
    """
    capacities = np.atleast_1d(np.asarray(capacities, dtype=float))
    n = len(paths)
    inst = FlowControlInstance(
        capacities,
        _routing(paths, capacities.size, n),
        np.broadcast_to(np.asarray(lower, dtype=float), (n,)).copy(),
        np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy(),
        np.broadcast_to(np.asarray(alpha, dtype=float), (n,)).copy(),
        np.broadcast_to(np.asarray(beta, dtype=float), (n,)).copy(),
    )
    if np.any(inst.alpha <= 0):
        raise ValueError("sigmoid slopes alpha must be positive")
    inst.check_feasible()
    used = inst.routing.any(axis=1)
    feasible = Polyhedron(inst.routing[used], capacities[used], inst.lower, inst.upper)
    costs = [utility_cost(n, i, inst.alpha[i], inst.beta[i]) for i in range(n)]
    problem = DistributedProblem(
        costs,
        feasible=feasible,
        surrogates={
            "structured": lambda i, t: DCSurrogate(costs[i], t),
            "linearize": lambda i, t: LinearizedSurrogate(costs[i], t),
        },
        name="flow_control",
    )
    problem.instance = inst
    problem.default_tau = tau
    return problem


def random_flow_control(n_sources=5, n_links=4, seed=0, tau=DEFAULT_TAU):
    """Random feasible instance: every source crosses one to three links,
    slopes ``alpha`` in 1..5 and offsets ``beta`` in -5..-1 (integers), rates
    in ``[0, 2]`` and capacities between 1 and 3."""
    n_sources = check_positive_int(n_sources, "n_sources")
    n_links = check_positive_int(n_links, "n_links")
    rng = check_rng(seed)
    paths = [sorted(rng.choice(n_links, size=rng.integers(1, min(3, n_links) + 1), replace=False).tolist())
             for _ in range(n_sources)]
    return build_flow_control(
        capacities=rng.uniform(1.0, 3.0, size=n_links),
        paths=paths,
        lower=0.0,
        upper=2.0,
        alpha=rng.integers(1, 6, size=n_sources),
        beta=-rng.integers(1, 6, size=n_sources),
        tau=tau,
    )
