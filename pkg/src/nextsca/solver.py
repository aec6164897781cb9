"""NEXT (exact and inexact) and the D-Gradient baseline.

The network state is kept as stacked arrays, one row per agent:
``X`` (local copies), ``Y`` (gradient trackers), ``Pi`` (estimates of the
other agents' gradient sum) and ``G`` (cached local gradients).
"""

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_positive_int, check_rng, check_states
from .metrics import RunTrace, metric_row
from .problem import ZeroRegularizer, sample_feasible
from .surrogate import (
    SURROGATE_KINDS,
    LinearizedSurrogate,
    Subproblem,
    SubproblemError,
    _apg,
    build_surrogate,
    solve_exact,
    solve_inexact,
)


class NumericalAbort(FloatingPointError):
    """NaN/Inf in the network state or a failed local solve."""

    def __init__(self, message, iteration, agent=None):
        super().__init__(message)
        self.iteration = iteration
        self.agent = agent


# -- step sizes --------------------------------------------------------------

STEP_RULES = ("rule1", "rule2", "constant")


def step_rule_problems(kind, alpha0, beta=1.0, mu=0.01):
    """Human-readable violations of the step-size parameter ranges."""
    if kind not in STEP_RULES:
        return [f"unknown step rule {kind!r} (choose from {', '.join(STEP_RULES)})"]
    out = []
    if not alpha0 > 0:
        out.append("α[0] must be positive")
    if kind == "rule1" and not 0.5 < beta <= 1:
        out.append("β must lie in (0.5, 1]")
    if kind == "rule2":
        if not 0 < mu < 1:
            out.append("μ must lie in (0, 1)")
        if not alpha0 <= 1:
            out.append("α[0] must lie in (0, 1]")
    return out


class StepSizeRule:
    """Diminishing step sizes.

    ``rule1``: ``alpha[n] = alpha0 / (n + 1)**beta`` with ``0.5 < beta <= 1``.
    ``rule2``: ``alpha[n] = alpha[n-1] (1 - mu alpha[n-1])`` with
    ``alpha[0] in (0, 1]`` and ``mu in (0, 1)``.
    ``constant`` is for diagnostics only; it is not square summable.
    """

    def __init__(self, kind="rule2", alpha0=0.1, beta=1.0, mu=0.01):
        self.kind = kind
        self.alpha0 = alpha0
        self.beta = beta
        self.mu = mu
        for msg in self.problems():
            raise ValueError(msg)
        self._cache = [float(alpha0)]

    @classmethod
    def rule1(cls, alpha0, beta):
        return cls("rule1", alpha0=alpha0, beta=beta)

    @classmethod
    def rule2(cls, alpha0, mu):
        return cls("rule2", alpha0=alpha0, mu=mu)

    @classmethod
    def constant(cls, alpha):
        return cls("constant", alpha0=alpha)

    def problems(self):
        """List of human-readable parameter violations."""
        return step_rule_problems(self.kind, self.alpha0, self.beta, self.mu)

    def __call__(self, n):
        if self.kind == "rule1":
            return self.alpha0 / (n + 1) ** self.beta
        if self.kind == "constant":
            return float(self.alpha0)
        while len(self._cache) <= n:
            a = self._cache[-1]
            self._cache.append(a * (1.0 - self.mu * a))
        return self._cache[n]

    def sequence(self, length):
        if self.kind == "rule1":
            return self.alpha0 / (np.arange(length) + 1.0) ** self.beta
        return np.array([self(n) for n in range(length)])

    @property
    def diminishing(self):
        """``sum alpha = inf`` and ``sum alpha^2 < inf``.

        rule1: the p-series with ``0.5 < beta <= 1``. rule2: the recursion
        behaves like ``1 / (mu n)`` for large ``n``.
        """
        return self.kind in ("rule1", "rule2")

    def summable_with_errors(self, c=1.0):
        """``sum alpha[n] eps[n] < inf`` for ``eps[n] = c alpha[n]``."""
        return self.diminishing and c >= 0

    def __repr__(self):
        return f"StepSizeRule({self.kind!r}, alpha0={self.alpha0}, beta={self.beta}, mu={self.mu})"


# -- state -------------------------------------------------------------------

class AgentState(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    pi: np.ndarray
    grad_cache: np.ndarray


@dataclass
class NetworkState:
    X: np.ndarray
    Y: np.ndarray = None
    Pi: np.ndarray = None
    G: np.ndarray = None

    @property
    def n_agents(self):
        return self.X.shape[0]

    def agent(self, i):
        return AgentState(self.X[i], self.Y[i], self.Pi[i], self.G[i])

    def agents(self):
        return [self.agent(i) for i in range(self.n_agents)]

    def copy(self):
        return NetworkState(*(None if a is None else a.copy() for a in (self.X, self.Y, self.Pi, self.G)))


def initial_state(problem, X0):
    """``y_i[0] = grad f_i(x_i[0])`` and ``pi_i[0] = I y_i[0] - grad f_i(x_i[0])``."""
    X = check_states(X0, problem.n_agents, problem.dim, "x0").copy()
    G = problem.local_gradients(X)
    Y = G.copy()
    return NetworkState(X, Y, problem.n_agents * Y - G, G)


INIT_STREAM = 7919


def random_initial_points(problem, seed):
    """One point of ``K`` per agent.

    Integer seeds are tagged before use: instance builders draw their own
    geometry from ``default_rng(seed)`` over the same box, and reusing that
    stream would start every agent exactly at its own sensor.
    """
    if isinstance(seed, (int, np.integer)):
        seed = np.random.default_rng([int(seed), INIT_STREAM])
    return sample_feasible(problem.feasible, problem.n_agents, check_rng(seed))


def _guard(state_arrays, n, what):
    for name, arr in state_arrays:
        if not np.all(np.isfinite(arr)):
            bad = int(np.argwhere(~np.isfinite(arr))[0][0])
            raise NumericalAbort(f"non-finite {name} at iteration {n} (agent {bad}) in {what}", n, bad)


def next_step(problem, models, state, W, alpha, eps=None, n=0):
    """One NEXT iteration.

    Local solves (exact, or within ``eps[i]`` when given), the convex
    combination step, then the consensus phase: mix ``z`` into ``x``,
    refresh gradients at the new points, and mix the trackers. Returns the new
    state and the total number of inner iterations of inexact solves.
    """
    I = problem.n_agents
    X, Y, G = state.X, state.Y, state.G
    reg, feas = problem.regularizer, problem.feasible
    X_tilde = np.empty_like(X)
    inner = 0
    for i in range(I):
        sub = Subproblem(X[i], state.Pi[i], models[i], reg, feas)
        try:
            if eps is None:
                X_tilde[i] = solve_exact(sub)
            else:
                report = solve_inexact(sub, eps[i])
                X_tilde[i] = report.solution
                inner += report.inner_iterations
        except SubproblemError as exc:
            raise NumericalAbort(f"agent {i} local solve failed at iteration {n}: {exc}", n, i) from exc
    Z = X + alpha * (X_tilde - X)
    X_new = W @ Z
    G_new = problem.local_gradients(X_new)
    Y_new = W @ Y + G_new - G
    Pi_new = I * Y_new - G_new
    _guard([("x", X_new), ("y", Y_new)], n, "NEXT")
    return NetworkState(X_new, Y_new, Pi_new, G_new), inner


def dgradient_step(problem, X, W, alpha, n=0):
    """``z_i = prox_{K, alpha G / I}(x_i - alpha grad f_i(x_i))`` then ``x+ = W z``.

    With ``G = 0`` the prox is the plain projection of the classical scheme;
    otherwise each agent carries a ``1/I`` share of the regularizer.
    """
    I = problem.n_agents
    grads = problem.local_gradients(X)
    share = alpha / I
    Z = np.stack([problem.regularizer.prox(X[i] - alpha * grads[i], share, problem.feasible)
                  for i in range(I)])
    X_new = W @ Z
    _guard([("x", X_new)], n, "D-Gradient")
    return X_new


def resolve_surrogates(problem, surrogate, tau, options=None):
    """One surrogate model per agent.

    ``surrogate`` is a name registered by the problem (e.g. ``"structured"``), a
    generic kind from :data:`SURROGATE_KINDS`, or a callable
    ``(agent_index, cost, tau) -> SurrogateModel``.
    """
    options = options or {}
    if callable(surrogate):
        return [surrogate(i, c, tau) for i, c in enumerate(problem.costs)]
    if surrogate in problem.surrogates:
        factory = problem.surrogates[surrogate]
        return [factory(i, tau) for i in range(problem.n_agents)]
    if surrogate in SURROGATE_KINDS:
        return [build_surrogate(c, surrogate, tau, **options) for c in problem.costs]
    raise ValueError(
        f"unknown surrogate {surrogate!r}; problem offers {sorted(problem.surrogates)}, "
        f"generic kinds are {sorted(SURROGATE_KINDS)}"
    )


def next_l_equivalence_check(problem, x, pi, tau, agent=0, tol=1e-10):
    """Compare the iterative solution of the linearized subproblem with the
    explicit ``Pi_K(x - (grad f_i(x) + pi) / tau)``."""
    if not isinstance(problem.regularizer, ZeroRegularizer):
        raise ValueError("the projection formula assumes G = 0")
    cost = problem.costs[agent]
    x = np.asarray(x, dtype=float)
    explicit = problem.feasible.project(x - (cost.gradient(x) + pi) / tau)
    sub = Subproblem(x, np.asarray(pi, dtype=float), LinearizedSurrogate(cost, tau),
                     problem.regularizer, problem.feasible)
    iterative, _, _ = _apg(sub, problem.feasible.project(x), 1e-13)
    return bool(np.max(np.abs(iterative - explicit)) <= tol)


# -- estimators --------------------------------------------------------------

class _NetworkSolver(BaseEstimator):
    comm_per_iteration = 1

    def _check_fit_args(self, problem, schedule, x0):
        if schedule.n_agents != problem.n_agents:
            raise ValueError(
                f"schedule has {schedule.n_agents} agents, problem has {problem.n_agents}"
            )
        check_positive_int(self.max_iter, "max_iter", minimum=0)
        check_positive_int(self.metric_every, "metric_every")
        if x0 is None:
            x0 = random_initial_points(problem, self.random_state)
        return check_states(x0, problem.n_agents, problem.dim, "x0").copy()

    def _step_rule(self):
        return StepSizeRule(self.step_rule, alpha0=self.alpha0, beta=self.beta, mu=self.mu)

    def _record(self, problem, n, X, Y, t0):
        row = metric_row(problem, X, n, self.comm_per_iteration * n,
                         Y=Y if self.track else None, wall_time=time.perf_counter() - t0)
        self.trace_.append(row)
        return row

    def _loop(self, problem, schedule, step, t0):
        rule = self._step_rule()
        row = self._record(problem, 0, *self._xy(), t0)
        n = 0
        while n < self.max_iter and not (self.tol is not None and row.J <= self.tol):
            step(n, schedule.weight(n), rule(n))
            n += 1
            if n % self.metric_every == 0 or n == self.max_iter:
                row = self._record(problem, n, *self._xy(), t0)
        if self.trace_.final.n != n:
            self._record(problem, n, *self._xy(), t0)
        self.n_iter_ = n


class NEXT(_NetworkSolver):
    """NEXT over a time-varying graph schedule.

    Parameters
    ----------
    surrogate : str or callable
        Problem-registered surrogate name, a generic kind
        (``"linearize"``, ``"keep_convex"``, ...), or a factory
        ``(agent_index, cost, tau) -> SurrogateModel``.
    tau : float
        Strong-convexity constant of the surrogates.
    step_rule, alpha0, beta, mu
        Step-size rule and its parameters (see :class:`StepSizeRule`).
    max_iter : int
        Iteration budget.
    tol : float or None
        Stop early once the stationarity gap ``J`` of the average is at or
        below ``tol`` (checked at metric ticks).
    inexact : bool
        Solve the local problems only to accuracy ``eps_i[n] = eps_scale * alpha[n]``.
    eps_scale : float
        Constant ``c_i`` of the inexact schedule.
    metric_every : int
        Metric cadence in iterations.
    track : bool
        Record the gradient-tracking error (costs ``I^2`` gradient calls per row).
    random_state : int, Generator or None
        Seed for the uniform initialization over the box hull of ``K``.
    surrogate_options : dict or None
        Extra structure for generic kinds (``block``, ``blocks``, ``inner``).

    Attributes
    ----------
    trace_ : RunTrace
    state_ : NetworkState
    x_ : ndarray
        Network average of the final local copies.
    n_iter_ : int
    inner_iterations_ : int
        Inner solver iterations spent by inexact solves.
    """

    comm_per_iteration = 2

    def __init__(self, surrogate="linearize", tau=1.0, step_rule="rule2", alpha0=0.1, beta=1.0,
                 mu=0.01, max_iter=1000, tol=None, inexact=False, eps_scale=1.0, metric_every=1,
                 track=True, random_state=None, surrogate_options=None):
        self.surrogate = surrogate
        self.tau = tau
        self.step_rule = step_rule
        self.alpha0 = alpha0
        self.beta = beta
        self.mu = mu
        self.max_iter = max_iter
        self.tol = tol
        self.inexact = inexact
        self.eps_scale = eps_scale
        self.metric_every = metric_every
        self.track = track
        self.random_state = random_state
        self.surrogate_options = surrogate_options

    def _xy(self):
        return self.state_.X, self.state_.Y

    def fit(self, problem, schedule, x0=None):
        X0 = self._check_fit_args(problem, schedule, x0)
        rule = self._step_rule()
        if self.inexact and not rule.summable_with_errors(self.eps_scale):
            raise ValueError("inexact NEXT needs a square-summable step rule (sum alpha*eps < inf)")
        self.models_ = resolve_surrogates(problem, self.surrogate, self.tau, self.surrogate_options)
        self.state_ = initial_state(problem, X0)
        self.trace_ = RunTrace()
        self.inner_iterations_ = 0
        I = problem.n_agents

        def step(n, W, alpha):
            eps = np.full(I, self.eps_scale * alpha) if self.inexact else None
            self.state_, inner = next_step(problem, self.models_, self.state_, W, alpha, eps=eps, n=n)
            self.inner_iterations_ += inner

        self._loop(problem, schedule, step, time.perf_counter())
        self.x_ = self.state_.X.mean(axis=0)
        return self


class DGradient(_NetworkSolver):
    """Consensus-based projected gradient baseline (one exchange per iteration).

    Parameters mirror :class:`NEXT` without the surrogate and inexactness
    options. ``track`` is accepted for symmetry and ignored.
    """

    def __init__(self, step_rule="rule2", alpha0=0.05, beta=1.0, mu=0.05, max_iter=1000,
                 tol=None, metric_every=1, track=False, random_state=None):
        self.step_rule = step_rule
        self.alpha0 = alpha0
        self.beta = beta
        self.mu = mu
        self.max_iter = max_iter
        self.tol = tol
        self.metric_every = metric_every
        self.track = track
        self.random_state = random_state

    def _xy(self):
        return self.X_, None

    def fit(self, problem, schedule, x0=None):
        self.X_ = self._check_fit_args(problem, schedule, x0)
        self.trace_ = RunTrace()

        def step(n, W, alpha):
            self.X_ = dgradient_step(problem, self.X_, W, alpha, n=n)

        self._loop(problem, schedule, step, time.perf_counter())
        self.x_ = self.X_.mean(axis=0)
        return self


# -- config-driven entry point -----------------------------------------------

ALGORITHMS = ("next-pl", "next-l", "next-inexact", "dgradient")


@dataclass
class RunConfig:
    """Everything :func:`run` needs besides the problem and the schedule.

    ``surrogate`` defaults per algorithm: ``next-pl`` and ``next-inexact``
    use the problem's structured surrogate (registered as ``"structured"``),
    ``next-l`` the plain linearization.
    """

    algorithm: str = "next-pl"
    iterations: int = 1000
    step: StepSizeRule = field(default_factory=StepSizeRule)
    tau: float = 1.0
    surrogate: str = None
    eps_scale: float = 1.0
    seed: int = 0
    cadence: int = 1
    tol: float = None
    track: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.algorithm == "next-inexact" and not self.step.summable_with_errors(self.eps_scale):
            raise ValueError("inexact schedule eps = c*alpha needs a square-summable step rule")

    def surrogate_name(self, problem):
        if self.surrogate is not None:
            return self.surrogate
        if self.algorithm == "next-l":
            return "linearize"
        return "structured" if "structured" in problem.surrogates else "keep_convex"

    def estimator(self, problem):
        step = dict(step_rule=self.step.kind, alpha0=self.step.alpha0, beta=self.step.beta, mu=self.step.mu)
        common = dict(max_iter=self.iterations, tol=self.tol, metric_every=self.cadence,
                      random_state=self.seed, **step)
        if self.algorithm == "dgradient":
            return DGradient(**common)
        return NEXT(surrogate=self.surrogate_name(problem), tau=self.tau,
                    inexact=self.algorithm == "next-inexact", eps_scale=self.eps_scale,
                    track=self.track, **common)


def run(problem, schedule, config, x0=None):
    """Run the configured algorithm and return its :class:`RunTrace`."""
    return config.estimator(problem).fit(problem, schedule, x0=x0).trace_
