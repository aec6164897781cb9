"""Centralized reference solvers.

These run with the whole objective in one place and are used to check the
distributed runs: a multi-start proximal-gradient method that returns the
best stationary point it finds, plus an estimator wrapper.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_positive, check_positive_int, check_rng
from .problem import sample_feasible, stationarity_residual, sum_gradient

TIE_TOL = 1e-10


class OracleError(RuntimeError):
    pass


@dataclass
class OracleSolution:
    point: np.ndarray
    objective: float
    residual: float
    restarts: int


def _prox_gradient(problem, x0, tol, max_iter):
    """Monotone accelerated proximal gradient with backtracking.

    An extrapolated step is kept only when it does not increase ``U``;
    otherwise the plain step from the last iterate is taken and the momentum
    is reset. Stops when the unit-step residual drops to ``tol``.
    """
    U = problem.value
    x = problem.prox_step(np.asarray(x0, dtype=float), 1.0)
    u_x = U(x)
    x_prev = x.copy()
    t, t_prev = 1.0, 1.0
    L = 1.0
    for k in range(max_iter):
        res = stationarity_residual(problem, x)
        if res <= tol:
            return x, u_x, res, k
        y = x + ((t_prev - 1.0) / t) * (x - x_prev)
        candidates = (y, x) if np.any(y != x) else (x,)
        for start in candidates:
            g = sum_gradient(problem, start)
            while True:
                z = problem.prox_step(start - g / L, 1.0 / L)
                d = z - start
                # Local Lipschitz test in gradient form; unlike the
                # function-value test it stays reliable next to the optimum
                # where differences of F are lost to rounding.
                if (sum_gradient(problem, z) - g) @ d <= L * (d @ d):
                    break
                L *= 2.0
                if L > 1e20:
                    raise OracleError("backtracking failed: gradient is not Lipschitz here")
            u_z = U(z)
            if u_z <= u_x + 1e-15 * (1.0 + abs(u_x)) or start is x:
                break
            t_prev, t = 1.0, 1.0  # restart momentum and retry from x
        x_prev, x, u_x = x, z, u_z
        t_prev, t = t, 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        L = max(L / 1.5, 1e-12)
    res = stationarity_residual(problem, x)
    return x, u_x, res, max_iter


def _better(a, b):
    """Order candidates by objective; near ties go to the lexicographically
    smaller point so the reduction does not depend on restart order."""
    if b is None:
        return True
    if a.objective < b.objective - TIE_TOL:
        return True
    if abs(a.objective - b.objective) <= TIE_TOL:
        for u, v in zip(a.point, b.point):
            if u != v:
                return u < v
    return False


def centralized_solve(problem, tol=1e-10, restarts=20, seed=0, max_iter=200_000, starts=None):
    """Best stationary point over ``restarts`` seeded starting points.

    Starting points are drawn uniformly over the bounding box of ``K`` (or
    taken from ``starts``). Every restart runs the proximal-gradient method
    until the residual ``||x - prox_{G + K}(x - grad F(x))||_inf`` is at most
    ``tol``; restarts that hit ``max_iter`` are discarded.
    """
    check_positive(tol, "tol")
    restarts = check_positive_int(restarts, "restarts")
    if starts is None:
        starts = sample_feasible(problem.feasible, restarts, check_rng(seed))
    best, closest = None, np.inf
    for x0 in np.atleast_2d(starts):
        x, u, res, _ = _prox_gradient(problem, x0, tol, max_iter)
        closest = min(closest, res)
        if res > tol:
            continue
        cand = OracleSolution(x, float(u), float(res), len(starts))
        if _better(cand, best):
            best = cand
    if best is None:
        raise OracleError(f"no restart reached residual {tol:.1e} within {max_iter} iterations "
                          f"(closest residual {closest:.3e})")
    return best


class CentralizedSolver(BaseEstimator):
    """Estimator wrapper around :func:`centralized_solve`.

    After ``fit(problem)`` the solution is in ``solution_`` and its point in
    ``x_``.
    """

    def __init__(self, tol=1e-10, restarts=20, random_state=0, max_iter=200_000):
        self.tol = tol
        self.restarts = restarts
        self.random_state = random_state
        self.max_iter = max_iter

    def fit(self, problem, schedule=None, x0=None):
        starts = None if x0 is None else np.atleast_2d(x0)
        self.solution_ = centralized_solve(problem, self.tol, self.restarts, self.random_state,
                                           self.max_iter, starts)
        self.x_ = self.solution_.point
        return self
