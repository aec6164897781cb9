"""Strongly convex surrogates of the local costs and the agent subproblem

    x_tilde = argmin_{x in K}  f_tilde(x; anchor) + pi'(x - anchor) + G(x).

Every surrogate touches its cost at the anchor to first order and is
strongly convex with modulus ``tau``. The subproblem is solved in closed
form where the structure allows it, otherwise by an accelerated proximal
gradient loop that stops on a certified distance to the exact minimizer.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import lsq_linear

from .problem import Box, CompositionCost, DCCost, L1Regularizer, LinearRegularizer, RealSpace, ZeroRegularizer

EXACT_TOL = 1e-12
RESIDUAL_TOL = 1e-10
MAX_INNER = 100_000
STALL_PATIENCE = 500


class SurrogateError(ValueError):
    """Invalid surrogate construction (wrong structure or convexity)."""


class SubproblemError(RuntimeError):
    """Inner solver failed; ``residual`` carries the last certificate."""

    def __init__(self, message, residual=np.nan):
        super().__init__(message)
        self.residual = residual


# -- surrogate family --------------------------------------------------------

class SurrogateModel:
    """``f_tilde(x; anchor)`` for one agent.

    Subclasses implement :meth:`value` and :meth:`gradient`. :meth:`quadratic`
    returns ``(H, c)`` with ``f_tilde = x'Hx/2 + c'x + const`` when the
    surrogate is quadratic in ``x``; :meth:`best_response` may return a closed
    form minimizer of the full subproblem.
    """

    kind = "custom"
    blocks = None

    def __init__(self, cost, tau):
        if tau < 0:
            raise SurrogateError("tau must be nonnegative")
        self.cost = cost
        self.tau = float(tau)

    @property
    def dim(self):
        return self.cost.dim

    @property
    def modulus(self):
        return self.tau

    def value(self, x, anchor):
        raise NotImplementedError

    def gradient(self, x, anchor):
        raise NotImplementedError

    def quadratic(self, anchor):
        return None

    def curvature_bound(self, anchor):
        """Lipschitz constant of ``grad f_tilde(.; anchor)`` if cheaply known."""
        return None

    def best_response(self, anchor, pi, regularizer, feasible):
        return None

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, tau={self.tau})"


class LinearizedSurrogate(SurrogateModel):
    """First-order model plus a proximal term ``tau/2 ||x - anchor||^2``."""

    kind = "linearize"

    def __init__(self, cost, tau):
        if tau <= 0:
            raise SurrogateError("linearize needs tau > 0")
        super().__init__(cost, tau)

    def value(self, x, anchor):
        d = x - anchor
        return self.cost.value(anchor) + self.cost.gradient(anchor) @ d + 0.5 * self.tau * d @ d

    def gradient(self, x, anchor):
        return self.cost.gradient(anchor) + self.tau * (x - anchor)

    def quadratic(self, anchor):
        return self.tau * np.eye(self.dim), self.cost.gradient(anchor) - self.tau * anchor

    def curvature_bound(self, anchor):
        return self.tau

    def best_response(self, anchor, pi, regularizer, feasible):
        if not _exact_prox(regularizer, feasible):
            return None
        v = anchor - (self.cost.gradient(anchor) + pi) / self.tau
        return regularizer.prox(v, 1.0 / self.tau, feasible)


class KeepConvexSurrogate(SurrogateModel):
    """``f(x) + tau/2 ||x - anchor||^2`` for convex ``f``."""

    kind = "keep_convex"

    def __init__(self, cost, tau):
        if tau <= 0 and cost.strong_convexity <= 0:
            raise SurrogateError("tau = 0 needs a strongly convex cost")
        super().__init__(cost, tau)

    @property
    def modulus(self):
        return self.tau + self.cost.strong_convexity

    def value(self, x, anchor):
        d = x - anchor
        return self.cost.value(x) + 0.5 * self.tau * d @ d

    def gradient(self, x, anchor):
        return self.cost.gradient(x) + self.tau * (x - anchor)

    def quadratic(self, anchor):
        form = self.cost.quadratic_form()
        if form is None:
            return None
        H, c, _ = form
        return H + self.tau * np.eye(self.dim), c - self.tau * anchor

    def curvature_bound(self, anchor):
        return None if self.cost.lipschitz is None else self.cost.lipschitz + self.tau


class NewtonSurrogate(SurrogateModel):
    """Second-order model of a convex cost plus ``tau/2 ||x - anchor||^2``."""

    kind = "newton"

    def __init__(self, cost, tau):
        if tau <= 0:
            raise SurrogateError("newton needs tau > 0")
        super().__init__(cost, tau)

    def _hessian(self, anchor):
        H = np.atleast_2d(self.cost.hessian(anchor))
        H = 0.5 * (H + H.T)
        lo = np.linalg.eigvalsh(H)[0]
        if lo < -1e-10 * max(1.0, np.abs(H).max()):
            raise SurrogateError(
                f"Hessian is indefinite at the anchor (min eigenvalue {lo:.3e}); "
                "the Newton surrogate needs a convex cost"
            )
        return H

    def value(self, x, anchor):
        d = x - anchor
        H = self._hessian(anchor)
        return (self.cost.value(anchor) + self.cost.gradient(anchor) @ d
                + 0.5 * d @ H @ d + 0.5 * self.tau * d @ d)

    def gradient(self, x, anchor):
        d = x - anchor
        return self.cost.gradient(anchor) + self._hessian(anchor) @ d + self.tau * d

    def quadratic(self, anchor):
        H = self._hessian(anchor) + self.tau * np.eye(self.dim)
        return H, self.cost.gradient(anchor) - H @ anchor


def _block_index(dim, block):
    idx = np.zeros(dim, dtype=bool)
    idx[np.asarray(block, dtype=int)] = True
    if idx.all() or not idx.any():
        raise SurrogateError("block must be a proper nonempty subset of the coordinates")
    return idx


class PartialLinearizationSurrogate(SurrogateModel):
    """Keep ``f`` in the convex block, linearize it in the rest.

    ``f(x1, a2) + tau/2 ||x1 - a1||^2 + grad_2 f(a)'(x2 - a2) + tau/2 ||x2 - a2||^2``
    where ``block`` lists the coordinates of ``x1``.
    """

    kind = "partial_linearize"

    def __init__(self, cost, tau, block):
        if tau <= 0:
            raise SurrogateError("partial_linearize needs tau > 0")
        super().__init__(cost, tau)
        self.convex_block = _block_index(cost.dim, block)

    def _mixed(self, x, anchor):
        z = anchor.copy()
        z[self.convex_block] = x[self.convex_block]
        return z

    def value(self, x, anchor):
        d = x - anchor
        rest = ~self.convex_block
        g2 = self.cost.gradient(anchor)[rest]
        return self.cost.value(self._mixed(x, anchor)) + g2 @ d[rest] + 0.5 * self.tau * d @ d

    def gradient(self, x, anchor):
        g = self.cost.gradient(anchor).copy()
        g1 = self.cost.gradient(self._mixed(x, anchor))
        g[self.convex_block] = g1[self.convex_block]
        return g + self.tau * (x - anchor)


class BlockConvexSurrogate(SurrogateModel):
    """``f(x1, a2) + f(a1, x2) + tau/2 ||x - anchor||^2`` for block-wise
    convex ``f``; ``block`` lists the coordinates of ``x1``."""

    kind = "block_convex"

    def __init__(self, cost, tau, block):
        if tau <= 0:
            raise SurrogateError("block_convex needs tau > 0")
        super().__init__(cost, tau)
        self.first = _block_index(cost.dim, block)

    def _split(self, x, anchor):
        z1 = anchor.copy()
        z1[self.first] = x[self.first]
        z2 = x.copy()
        z2[self.first] = anchor[self.first]
        return z1, z2

    def value(self, x, anchor):
        z1, z2 = self._split(x, anchor)
        d = x - anchor
        return self.cost.value(z1) + self.cost.value(z2) + 0.5 * self.tau * d @ d

    def gradient(self, x, anchor):
        z1, z2 = self._split(x, anchor)
        g = self.cost.gradient(z2)
        g[self.first] = self.cost.gradient(z1)[self.first]
        return g + self.tau * (x - anchor)


class CompositionSurrogate(SurrogateModel):
    """``g(h(a) + J_h(a)(x - a)) + tau/2 ||x - a||^2`` for ``f = g o h``."""

    kind = "composition"

    def __init__(self, cost, tau):
        if not isinstance(cost, CompositionCost):
            raise SurrogateError("composition surrogate needs a CompositionCost")
        if tau <= 0:
            raise SurrogateError("composition needs tau > 0")
        super().__init__(cost, tau)

    def _inner_linear(self, x, anchor):
        jac = np.atleast_2d(self.cost.inner.jacobian(anchor))
        return np.atleast_1d(self.cost.inner.value(anchor)) + jac @ (x - anchor), jac

    def value(self, x, anchor):
        u, _ = self._inner_linear(x, anchor)
        d = x - anchor
        return float(self.cost.outer.value(u)) + 0.5 * self.tau * d @ d

    def gradient(self, x, anchor):
        u, jac = self._inner_linear(x, anchor)
        return jac.T @ np.atleast_1d(self.cost.outer.gradient(u)) + self.tau * (x - anchor)


class DCSurrogate(SurrogateModel):
    """For ``f = p - q`` (both convex): keep ``p``, linearize ``q``."""

    kind = "dc"

    def __init__(self, cost, tau):
        if not isinstance(cost, DCCost):
            raise SurrogateError("dc surrogate needs a DCCost")
        if tau <= 0:
            raise SurrogateError("dc needs tau > 0")
        super().__init__(cost, tau)

    def value(self, x, anchor):
        d = x - anchor
        q = self.cost.concave_part
        return (self.cost.convex.value(x) - q.value(anchor) - q.gradient(anchor) @ d
                + 0.5 * self.tau * d @ d)

    def gradient(self, x, anchor):
        return (self.cost.convex.gradient(x) - self.cost.concave_part.gradient(anchor)
                + self.tau * (x - anchor))


class BlockSeparableSurrogate(SurrogateModel):
    """``sum_c f_c(x_c; a_{-c}) + tau/2 ||x_c - a_c||^2`` over disjoint blocks.

    With ``inner="keep_convex"`` each block keeps ``f`` with the other blocks
    frozen at the anchor (needs ``f`` convex per block); ``"linearize"``
    linearizes ``f`` per block. The subproblem then splits into one
    independent problem per block when ``K`` and ``G`` split too.
    """

    kind = "block_separable"

    def __init__(self, cost, tau, blocks, inner="keep_convex"):
        if tau <= 0:
            raise SurrogateError("block_separable needs tau > 0")
        super().__init__(cost, tau)
        blocks = [np.asarray(b, dtype=int) for b in blocks]
        flat = np.sort(np.concatenate(blocks))
        if not np.array_equal(flat, np.arange(cost.dim)):
            raise SurrogateError("blocks must partition the coordinates")
        if inner not in ("keep_convex", "linearize"):
            raise SurrogateError(f"unknown inner surrogate {inner!r}")
        self.blocks = blocks
        self.inner = inner

    def _with_block(self, x, anchor, b):
        z = anchor.copy()
        z[b] = x[b]
        return z

    def value(self, x, anchor):
        d = x - anchor
        total = 0.5 * self.tau * d @ d
        if self.inner == "linearize":
            return total + self.cost.value(anchor) * len(self.blocks) + self.cost.gradient(anchor) @ d
        return total + sum(self.cost.value(self._with_block(x, anchor, b)) for b in self.blocks)

    def gradient(self, x, anchor):
        if self.inner == "linearize":
            return self.cost.gradient(anchor) + self.tau * (x - anchor)
        g = np.empty(self.dim)
        for b in self.blocks:
            g[b] = self.cost.gradient(self._with_block(x, anchor, b))[b]
        return g + self.tau * (x - anchor)

    def restrict(self, b, anchor):
        """Surrogate of block ``b`` alone, as a model on ``R^{|b|}``."""
        return _BlockView(self, b, anchor)


class _BlockView(SurrogateModel):
    kind = "block"

    def __init__(self, parent, block, anchor):
        self.parent = parent
        self.block = block
        self.full_anchor = anchor
        self.tau = parent.tau
        self.cost = parent.cost

    @property
    def dim(self):
        return self.block.size

    def _lift(self, xb):
        z = self.full_anchor.copy()
        z[self.block] = xb
        return z

    def value(self, xb, anchor_b):
        z = self._lift(xb)
        d = xb - anchor_b
        if self.parent.inner == "linearize":
            return self.cost.gradient(self.full_anchor)[self.block] @ d + 0.5 * self.tau * d @ d
        return self.cost.value(z) + 0.5 * self.tau * d @ d

    def gradient(self, xb, anchor_b):
        src = self.full_anchor if self.parent.inner == "linearize" else self._lift(xb)
        return self.cost.gradient(src)[self.block] + self.tau * (xb - anchor_b)


SURROGATE_KINDS = {
    "linearize": LinearizedSurrogate,
    "keep_convex": KeepConvexSurrogate,
    "newton": NewtonSurrogate,
    "partial_linearize": PartialLinearizationSurrogate,
    "block_convex": BlockConvexSurrogate,
    "composition": CompositionSurrogate,
    "dc": DCSurrogate,
    "block_separable": BlockSeparableSurrogate,
}


def build_surrogate(cost, kind, tau, check_anchors=None, rng=None, **structure):
    """Instantiate a surrogate of ``cost``.

    ``structure`` carries the kind-specific pieces (``block`` for the
    partial/block-convex kinds, ``blocks``/``inner`` for block_separable).
    When ``check_anchors`` is given the model is verified there with
    :func:`verify_surrogate` before being returned.
    """
    try:
        factory = SURROGATE_KINDS[kind]
    except KeyError:
        raise SurrogateError(f"unknown surrogate kind {kind!r}; choose from {sorted(SURROGATE_KINDS)}") from None
    try:
        model = factory(cost, tau, **structure)
    except TypeError as exc:
        raise SurrogateError(f"{kind}: {exc}") from None
    if check_anchors is not None:
        verify_surrogate(model, check_anchors, rng=rng)
    return model


def verify_surrogate(model, anchors, rng=None, grad_tol=1e-7, slack=1e-10, spread=1.0):
    """Check the anchor-gradient identity and the strong-convexity secant
    inequality at each anchor. Returns the worst gradient error and the worst
    secant margin; raises :class:`SurrogateError` on failure."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst_grad, worst_margin = 0.0, np.inf
    for a in np.atleast_2d(anchors):
        g_true = model.cost.gradient(a)
        err = np.linalg.norm(model.gradient(a, a) - g_true)
        worst_grad = max(worst_grad, err / (1.0 + np.linalg.norm(g_true)))
        p, q = a + spread * rng.standard_normal((2, a.size))
        lhs = model.value(p, a) + model.value(q, a) - 2.0 * model.value(0.5 * (p + q), a)
        margin = lhs - 0.25 * model.modulus * np.sum((p - q) ** 2)
        worst_margin = min(worst_margin, margin)
    if worst_grad > grad_tol:
        raise SurrogateError(f"anchor gradient mismatch {worst_grad:.3e}")
    if worst_margin < -slack:
        raise SurrogateError(f"strong convexity secant violated by {-worst_margin:.3e}")
    return worst_grad, worst_margin


def anchor_lipschitz_estimate(model, points, anchors):
    """Empirical Lipschitz constant of ``a -> grad f_tilde(x; a)``.

    For every ``x`` in ``points`` the quotient is taken over consecutive
    anchor pairs. Sampling can only show the constant is at least this large,
    so the value is a diagnostic rather than a certificate.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    da = np.linalg.norm(np.diff(anchors, axis=0), axis=1)
    worst = 0.0
    for x in np.atleast_2d(points):
        grads = np.stack([model.gradient(x, a) for a in anchors])
        dg = np.linalg.norm(np.diff(grads, axis=0), axis=1)
        keep = da > 0
        worst = max(worst, float(np.max(dg[keep] / da[keep], initial=0.0)))
    return worst


# -- subproblem --------------------------------------------------------------

def _exact_prox(regularizer, feasible):
    """True when ``prox_{G + indicator K}`` is available in closed form."""
    if isinstance(feasible, RealSpace):
        return True
    if isinstance(feasible, Box):
        return regularizer.separable
    return isinstance(regularizer, ZeroRegularizer)


@dataclass
class Subproblem:
    anchor: np.ndarray
    pi: np.ndarray
    model: SurrogateModel
    regularizer: object
    feasible: object

    def smooth_value(self, x):
        return self.model.value(x, self.anchor) + self.pi @ (x - self.anchor)

    def smooth_gradient(self, x):
        return self.model.gradient(x, self.anchor) + self.pi

    def objective(self, x):
        return self.smooth_value(x) + self.regularizer.value(x)

    def prox(self, v, gamma):
        return self.regularizer.prox(v, gamma, self.feasible)

    def residual(self, x):
        """Minimum-principle residual ``||x - prox(x - grad s(x))||`` (unit step)."""
        return float(np.linalg.norm(x - self.prox(x - self.smooth_gradient(x), 1.0)))

    def certify(self, x, step):
        """One prox-gradient step from ``x`` and a bound on its distance to
        the exact minimizer.

        With ``x+ = prox_{step h}(x - step grad s(x))`` the vector
        ``(x - x+)/step + grad s(x+) - grad s(x)`` is a subgradient of the
        subproblem objective at ``x+``; strong convexity with modulus ``mu``
        then gives ``||x+ - x*|| <= ||that vector|| / mu``.
        """
        g = self.smooth_gradient(x)
        x_new = self.prox(x - step * g, step)
        sub = (x - x_new) / step + self.smooth_gradient(x_new) - g
        return x_new, float(np.linalg.norm(sub)) / self.model.modulus


@dataclass
class SolveReport:
    solution: np.ndarray
    accuracy_bound: float
    inner_iterations: int


def _apg(sub, x0, tol, max_iter=MAX_INNER, patience=STALL_PATIENCE):
    """Accelerated proximal gradient with backtracking and adaptive restart;
    stops once the certificate of :meth:`Subproblem.certify` drops below
    ``tol``.

    If the certificate has not improved for ``patience`` iterations (it is
    stuck at rounding level) the best iterate so far is returned together
    with its certificate, which is then above ``tol``.
    """
    mu = sub.model.modulus
    L = sub.model.curvature_bound(sub.anchor)
    if L is None:
        quad = sub.model.quadratic(sub.anchor)
        L = float(np.linalg.eigvalsh(quad[0])[-1]) if quad is not None else max(mu, 1.0)
        backtrack = quad is None
    else:
        backtrack = False
    L = max(L, mu)
    x = sub.prox(np.asarray(x0, dtype=float), 1.0 / L)
    y = x.copy()
    f_x = sub.objective(x)
    bound = np.inf
    best, best_bound, best_k = x, np.inf, 0
    for k in range(1, max_iter + 1):
        g = sub.smooth_gradient(y)
        s_y = sub.smooth_value(y)
        while True:
            x_new = sub.prox(y - g / L, 1.0 / L)
            d = x_new - y
            if not backtrack:
                break
            if sub.smooth_value(x_new) <= s_y + g @ d + 0.5 * L * d @ d + 1e-12 * (1 + abs(s_y)):
                break
            L *= 2.0
        g_new = sub.smooth_gradient(x_new)
        bound = np.linalg.norm(L * (y - x_new) + g_new - g) / mu
        if bound <= tol:
            return x_new, float(bound), k
        if bound < best_bound:
            best, best_bound, best_k = x_new, bound, k
        elif k - best_k > patience:
            return best, float(best_bound), k
        f_new = sub.objective(x_new)
        if f_new > f_x:
            y = x_new.copy()
        else:
            q = min(mu / L, 1.0)
            beta = (1.0 - np.sqrt(q)) / (1.0 + np.sqrt(q))
            y = x_new + beta * (x_new - x)
        x, f_x = x_new, f_new
    raise SubproblemError(f"inner solver hit {max_iter} iterations (certificate {bound:.3e})", bound)


def _box_kkt_holds(H, c, x, lower, upper):
    grad = H @ x + c
    scale = 1e-10 * (1.0 + np.abs(c).max(initial=0.0) + np.abs(H).max() * np.abs(x).max(initial=0.0))
    ok = np.all(x >= lower - 1e-12) and np.all(x <= upper + 1e-12)
    inner = (x > lower) & (x < upper)
    ok &= np.all(np.abs(grad[inner]) <= scale)
    ok &= np.all(grad[(x <= lower) & ~inner] >= -scale)
    ok &= np.all(grad[(x >= upper) & ~inner] <= scale)
    return bool(ok)


def _primal_dual_active_set(H, c, lower, upper, max_iter):
    x = np.clip(np.linalg.solve(H, -c), lower, upper)
    prev = None
    for _ in range(max_iter):
        lam = -(H @ x + c)
        at_up = x + lam > upper
        at_lo = x + lam < lower
        key = (at_up.tobytes(), at_lo.tobytes())
        if key == prev:
            return x
        prev = key
        free = ~(at_up | at_lo)
        x = np.where(at_up, upper, np.where(at_lo, lower, 0.0))
        if free.any():
            rhs = -c[free] - H[np.ix_(free, ~free)] @ x[~free]
            x[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
    return None


def box_qp(H, c, lower, upper, max_iter=100):
    """``argmin x'Hx/2 + c'x`` over the box for positive definite ``H``.

    A primal-dual active-set pass handles the easy cases (it is exact when it
    settles, but it can cycle when ``H`` is not an M-matrix). Otherwise the
    problem is rewritten as bounded least squares with ``H = L L'`` and
    handed to scipy's BVLS. Returns None if neither answer passes the KKT
    check; callers then fall back to the iterative solver.
    """
    x = _primal_dual_active_set(H, c, lower, upper, max_iter)
    if x is not None and _box_kkt_holds(H, c, x, lower, upper):
        return x
    try:
        L = cholesky(H, lower=True)
    except np.linalg.LinAlgError:
        return None
    target = -solve_triangular(L, c, lower=True)
    x = lsq_linear(L.T, target, bounds=(lower, upper), method="bvls", tol=1e-15).x
    # keep BVLS's active set and solve the free coordinates exactly
    at_lo = x <= lower + 1e-12
    at_up = x >= upper - 1e-12
    free = ~(at_lo | at_up)
    x = np.where(at_up, upper, np.where(at_lo, lower, x))
    if free.any():
        rhs = -c[free] - H[np.ix_(free, ~free)] @ x[~free]
        x[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
    return x if _box_kkt_holds(H, c, x, lower, upper) else None


def quadratic_polish(H, c, reg, feasible, x, rel=1e-7):
    """Refine an approximate minimizer of ``x'Hx/2 + c'x + G(x)`` over a box.

    ``G`` is zero, linear or ``lam ||x||_1``. Each coordinate of ``x`` is
    assigned to a piece (at a bound, at the kink zero, or free with a fixed
    sign), the reduced linear system is solved, and the result is accepted
    only if it satisfies the optimality conditions exactly up to rounding.
    Returns None when the guess was wrong.
    """
    if isinstance(reg, LinearRegularizer):
        c, lam = c + reg.weights, 0.0
    elif isinstance(reg, L1Regularizer):
        lam = reg.lam
    elif isinstance(reg, ZeroRegularizer):
        lam = 0.0
    else:
        return None
    n = x.size
    if isinstance(feasible, Box):
        lo, hi = feasible.lower, feasible.upper
    elif isinstance(feasible, RealSpace):
        lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
    else:
        return None
    t = rel * (1.0 + np.abs(x))
    x_fix = np.where(np.abs(x - lo) <= t, lo, np.where(np.abs(x - hi) <= t, hi, np.nan))
    if lam > 0:
        x_fix = np.where(np.isnan(x_fix) & (np.abs(x) <= t), 0.0, x_fix)
    free = np.isnan(x_fix)
    sign = np.sign(x) * (lam > 0)
    y = np.where(free, 0.0, x_fix)
    if free.any():
        rhs = -(c[free] + lam * sign[free]) - H[np.ix_(free, ~free)] @ y[~free]
        try:
            y[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        except np.linalg.LinAlgError:
            return None
        if lam > 0 and np.any(np.sign(y[free]) != sign[free]):
            return None
    if np.any(y < lo) or np.any(y > hi):
        return None
    g = H @ y + c
    scale = 1e-11 * (1.0 + np.abs(c).max(initial=0.0) + np.abs(H).max() * np.abs(y).max(initial=0.0) + lam)
    # -g must lie in the subdifferential of G + indicator(box) at y
    lo_int = np.where(y == lo, -np.inf, 0.0) + np.where(y == 0, -lam, lam * np.sign(y))
    hi_int = np.where(y == hi, np.inf, 0.0) + np.where(y == 0, lam, lam * np.sign(y))
    if np.all(-g >= lo_int - scale) and np.all(-g <= hi_int + scale):
        return y
    return None


def _restrict_regularizer(reg, block):
    if isinstance(reg, ZeroRegularizer):
        return reg
    if isinstance(reg, LinearRegularizer):
        return LinearRegularizer(reg.weights[block])
    if isinstance(reg, L1Regularizer):
        return L1Regularizer(reg.lam)
    return None


def _closed_form(sub):
    model, reg, feas = sub.model, sub.regularizer, sub.feasible
    x = model.best_response(sub.anchor, sub.pi, reg, feas)
    if x is not None:
        return x
    quad = model.quadratic(sub.anchor)
    if quad is not None:
        H, c = quad
        c = c + sub.pi
        diag = np.diag(H)
        if np.all(diag == diag[0]) and not np.any(H - np.diag(diag)) and _exact_prox(reg, feas):
            h = diag[0]
            return reg.prox(-c / h, 1.0 / h, feas)
        if isinstance(reg, (ZeroRegularizer, LinearRegularizer)):
            if isinstance(reg, LinearRegularizer):
                c = c + reg.weights
            if isinstance(feas, RealSpace):
                return np.linalg.solve(H, -c)
            if isinstance(feas, Box):
                return box_qp(H, c, feas.lower, feas.upper)
    return None


def _solve_blocks(sub, tol):
    model, feas = sub.model, sub.feasible
    if not isinstance(feas, (Box, RealSpace)) or not sub.regularizer.separable:
        return None
    x = np.empty(model.dim)
    for b in model.blocks:
        reg_b = _restrict_regularizer(sub.regularizer, b)
        if reg_b is None:
            return None
        feas_b = Box(feas.lower[b], feas.upper[b]) if isinstance(feas, Box) else RealSpace(b.size)
        part = Subproblem(sub.anchor[b], sub.pi[b], model.restrict(b, sub.anchor), reg_b, feas_b)
        x[b] = solve_exact(part, tol=tol)
    return x


def solve_exact(sub, tol=EXACT_TOL, residual_tol=RESIDUAL_TOL):
    """Minimizer of the subproblem.

    Closed forms are tried first (surrogate-specific best response, scaled
    identity Hessian, box QP by active sets, block splitting); otherwise or
    if their residual is too large the certified iterative solver runs to
    ``tol``, and quadratic subproblems whose iterative answer is limited by
    rounding get an active-set polish. The result satisfies the minimum-principle residual
    ``residual_tol`` or :class:`SubproblemError` is raised.
    """
    x = _closed_form(sub)
    if x is None and sub.model.blocks is not None:
        x = _solve_blocks(sub, tol)
    res = np.inf if x is None else sub.residual(x)
    if res > residual_tol:
        start = sub.anchor if x is None else x
        x, _, _ = _apg(sub, start, tol)
        res = sub.residual(x)
        quad = sub.model.quadratic(sub.anchor) if res > residual_tol else None
        if quad is not None:
            y = quadratic_polish(quad[0], quad[1] + sub.pi, sub.regularizer, sub.feasible, x)
            if y is not None and sub.residual(y) < res:
                x, res = y, sub.residual(y)
    if res > residual_tol:
        raise SubproblemError(f"subproblem residual {res:.3e} above {residual_tol:.1e}", res)
    return x


def solve_inexact(sub, eps, x0=None, max_iter=MAX_INNER):
    """A point of ``K`` within ``eps`` of the exact minimizer.

    Runs the accelerated solver from ``x0`` (default: the anchor) and stops
    as soon as the strong-convexity certificate guarantees
    ``||x - x_tilde|| <= eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    start = sub.anchor if x0 is None else x0
    x, bound, its = _apg(sub, start, eps, max_iter=max_iter)
    if bound > eps:
        raise SubproblemError(f"certificate stalled at {bound:.3e} above eps={eps:.1e}", bound)
    return SolveReport(x, bound, its)
