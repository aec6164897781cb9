"""Building blocks of the distributed problem

    minimize  U(x) = sum_i f_i(x) + G(x)   subject to  x in K

with smooth (possibly nonconvex) local costs ``f_i``, a shared convex
regularizer ``G`` and a closed convex set ``K`` known to every agent.
"""

import numpy as np
from scipy.optimize import nnls

from ._validation import check_square, check_vector

CONTAINS_TOL = 1e-9


# -- smooth local costs ------------------------------------------------------

class SmoothLocalCost:
    """Base class for an agent's smooth cost ``f_i``.

    Subclasses implement :meth:`value` and :meth:`gradient`; :meth:`hessian`
    is optional and only needed by the Newton surrogate.
    """

    lipschitz = None
    strong_convexity = 0.0

    def __init__(self, dim):
        self.dim = int(dim)

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no Hessian oracle")

    def quadratic_form(self):
        """``(H, c, d)`` with ``f(x) = x'Hx/2 + c'x + d``, or None."""
        return None


class FunctionCost(SmoothLocalCost):
    """Cost assembled from plain callables."""

    def __init__(self, dim, value, gradient, hessian=None, lipschitz=None, strong_convexity=0.0):
        super().__init__(dim)
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.lipschitz = lipschitz
        self.strong_convexity = strong_convexity

    def value(self, x):
        return float(self._value(x))

    def gradient(self, x):
        return np.asarray(self._gradient(x), dtype=float)

    def hessian(self, x):
        if self._hessian is None:
            return super().hessian(x)
        return np.asarray(self._hessian(x), dtype=float)


class QuadraticCost(SmoothLocalCost):
    """``f(x) = x'Hx/2 + c'x + d`` with symmetric ``H``."""

    def __init__(self, H, c, d=0.0):
        H = check_square(H, name="H")
        super().__init__(H.shape[0])
        self.H = 0.5 * (H + H.T)
        self.c = check_vector(c, self.dim, "c")
        self.d = float(d)
        eig = np.linalg.eigvalsh(self.H)
        self.lipschitz = float(max(abs(eig[0]), abs(eig[-1])))
        self.strong_convexity = max(float(eig[0]), 0.0)

    def value(self, x):
        return float(0.5 * x @ self.H @ x + self.c @ x + self.d)

    def gradient(self, x):
        return self.H @ x + self.c

    def hessian(self, x):
        return self.H

    def quadratic_form(self):
        return self.H, self.c, self.d


class LeastSquaresCost(QuadraticCost):
    """``f(x) = ||phi - B x||^2``."""

    def __init__(self, B, phi):
        B = np.atleast_2d(np.asarray(B, dtype=float))
        phi = check_vector(phi, B.shape[0], "phi")
        super().__init__(2.0 * B.T @ B, -2.0 * B.T @ phi, float(phi @ phi))
        self.B = B
        self.phi = phi

    def value(self, x):
        r = self.phi - self.B @ x
        return float(r @ r)


class CompositionCost(SmoothLocalCost):
    """``f(x) = g(h(x))`` with convex outer ``g: R^k -> R`` and smooth inner
    ``h: R^m -> R^k``.

    ``outer`` and ``inner`` are objects exposing ``value``/``gradient`` and
    ``value``/``jacobian`` respectively.
    """

    def __init__(self, dim, outer, inner):
        super().__init__(dim)
        self.outer = outer
        self.inner = inner

    def value(self, x):
        return float(self.outer.value(self.inner.value(x)))

    def gradient(self, x):
        jac = np.atleast_2d(self.inner.jacobian(x))
        return jac.T @ np.atleast_1d(self.outer.gradient(self.inner.value(x)))


class DCCost(SmoothLocalCost):
    """Difference of convex functions ``f = convex - concave_part`` where both
    ``convex`` and ``concave_part`` are convex :class:`SmoothLocalCost`."""

    def __init__(self, convex, concave_part):
        if convex.dim != concave_part.dim:
            raise ValueError("DC parts must share the dimension")
        super().__init__(convex.dim)
        self.convex = convex
        self.concave_part = concave_part

    def value(self, x):
        return self.convex.value(x) - self.concave_part.value(x)

    def gradient(self, x):
        return self.convex.gradient(x) - self.concave_part.gradient(x)


# -- feasible sets -----------------------------------------------------------

class FeasibleSet:
    """Closed convex set with a Euclidean projection oracle."""

    box_bounds = None

    def __init__(self, dim):
        self.dim = int(dim)

    def project(self, v):
        raise NotImplementedError

    def contains(self, v, tol=CONTAINS_TOL):
        v = np.asarray(v, dtype=float)
        return bool(np.max(np.abs(self.project(v) - v), initial=0.0) <= tol)

    def bounding_box(self):
        """Finite box containing the set, or None."""
        return self.box_bounds


class RealSpace(FeasibleSet):
    def project(self, v):
        return np.array(v, dtype=float)

    def contains(self, v, tol=CONTAINS_TOL):
        return True


class Box(FeasibleSet):
    def __init__(self, lower, upper, dim=None):
        if dim is None:
            dim = np.size(lower) if np.ndim(lower) else np.size(upper)
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (dim,)).copy()
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (dim,)).copy()
        if np.any(lower > upper):
            raise ValueError("empty box: some lower bound exceeds its upper bound")
        super().__init__(dim)
        self.lower = lower
        self.upper = upper

    @property
    def box_bounds(self):
        return self.lower, self.upper

    def project(self, v):
        return np.clip(v, self.lower, self.upper)

    def contains(self, v, tol=CONTAINS_TOL):
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))


class Polyhedron(FeasibleSet):
    """``{x : A x <= b, lower <= x <= upper}``.

    The projection is a least-distance program, solved exactly through the
    Lawson-Hanson reduction to nonnegative least squares. Dykstra's
    alternating projections are kept as a fallback for degenerate cases.
    """

    def __init__(self, A, b, lower, upper, tol=1e-12, max_iter=100_000):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.box = Box(lower, upper, dim=A.shape[1])
        super().__init__(A.shape[1])
        self.A = A
        self.b = check_vector(b, A.shape[0], "b")
        self._row_norm2 = np.einsum("ij,ij->i", A, A)
        if np.any(self._row_norm2 == 0):
            raise ValueError("halfspace rows must be nonzero")
        self.tol = tol
        self.max_iter = max_iter

    def bounding_box(self):
        return self.box.box_bounds

    def contains(self, v, tol=CONTAINS_TOL):
        v = np.asarray(v, dtype=float)
        return self.box.contains(v, tol) and bool(np.all(self.A @ v <= self.b + tol))

    def project(self, v):
        v = np.asarray(v, dtype=float)
        x = self._project_ldp(v)
        return self._project_dykstra(v) if x is None else x

    def _ldp_template(self):
        lo, hi = self.box.lower, self.box.upper
        self._has_lo, self._has_hi = np.isfinite(lo), np.isfinite(hi)
        eye = np.eye(self.dim)
        G = np.vstack([-self.A, eye[self._has_lo], -eye[self._has_hi]])
        self._E = np.vstack([G.T, np.zeros(G.shape[0])])
        self._f = np.zeros(self.dim + 1)
        self._f[-1] = 1.0

    def _project_ldp(self, v):
        """``min ||z|| s.t. G z >= h`` with ``z = x - v``: if ``u >= 0``
        minimizes ``||E u - f||`` for ``E = [G'; h']`` and ``f = e_last``,
        the residual ``r = E u - f`` gives ``z = -r[:-1] / r[-1]``."""
        if not hasattr(self, "_E"):
            self._ldp_template()
        h = np.concatenate([self.A @ v - self.b, (self.box.lower - v)[self._has_lo],
                            (v - self.box.upper)[self._has_hi]])
        if np.all(h <= 0):
            return v.copy()  # already feasible
        E = self._E.copy()
        E[-1] = h
        try:
            u, _ = nnls(E, self._f, maxiter=50 * E.shape[1])
        except RuntimeError:
            return None
        r = E @ u - self._f
        if abs(r[-1]) < 1e-12:
            return None
        x = self.box.project(v - r[:-1] / r[-1])
        return x if np.all(self.A @ x <= self.b + 1e-10) else None

    def _project_dykstra(self, v):
        x = np.array(v, dtype=float)
        n_sets = self.A.shape[0] + 1
        corr = np.zeros((n_sets, self.dim))
        for _ in range(self.max_iter):
            x_start, corr_start = x.copy(), corr.copy()
            for k in range(n_sets):
                z = x + corr[k]
                if k < self.A.shape[0]:
                    viol = self.A[k] @ z - self.b[k]
                    y = z - (max(viol, 0.0) / self._row_norm2[k]) * self.A[k]
                else:
                    y = self.box.project(z)
                corr[k] = z - y
                x = y
            # x alone can return to its old value while the corrections are
            # still moving, so both must have settled
            moved = max(np.max(np.abs(x - x_start)), np.max(np.abs(corr - corr_start)))
            if moved <= self.tol and self.contains(x, 1e-10):
                return x
        raise RuntimeError("Dykstra projection did not converge")


# -- regularizers ------------------------------------------------------------

class Regularizer:
    """Convex, possibly nonsmooth ``G`` with a proximal oracle.

    ``prox(v, gamma, feasible)`` returns ``argmin_u G(u) + ||u - v||^2/(2 gamma)``
    over ``feasible`` (or all of R^m when ``feasible`` is None).
    """

    is_zero = False
    separable = True
    bound = None

    def value(self, x):
        raise NotImplementedError

    def subgradient(self, x):
        raise NotImplementedError

    def _prox(self, v, gamma):
        raise NotImplementedError

    def prox(self, v, gamma=1.0, feasible=None):
        v = np.asarray(v, dtype=float)
        if feasible is None or isinstance(feasible, RealSpace):
            return self._prox(v, gamma)
        if isinstance(feasible, Box) and self.separable:
            # separable 1-D convex problems: clamping the free minimizer is exact
            return feasible.project(self._prox(v, gamma))
        return _dykstra_prox(lambda z: self._prox(z, gamma), feasible.project, v)


def _dykstra_prox(prox_g, project, v, tol=1e-13, max_iter=100_000):
    """Prox of ``G + indicator(K)`` from the two individual operators."""
    x = np.array(v, dtype=float)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = prox_g(x + p)
        p_new = x + p - y
        x_new = project(y + q)
        q_new = y + q - x_new
        moved = max(np.max(np.abs(x_new - x)), np.max(np.abs(p_new - p)), np.max(np.abs(q_new - q)))
        x, p, q = x_new, p_new, q_new
        if moved <= tol:
            return x
    raise RuntimeError("proximal Dykstra iteration did not converge")


class ZeroRegularizer(Regularizer):
    is_zero = True
    bound = 0.0

    def value(self, x):
        return 0.0

    def subgradient(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def _prox(self, v, gamma):
        return np.array(v, dtype=float)

    def prox(self, v, gamma=1.0, feasible=None):
        if feasible is None:
            return np.array(v, dtype=float)
        return feasible.project(v)


class LinearRegularizer(Regularizer):
    """``G(x) = w'x`` (e.g. ``lambda * 1'x``)."""

    def __init__(self, weights):
        self.weights = check_vector(weights, name="weights")
        self.bound = float(np.linalg.norm(self.weights))

    def value(self, x):
        return float(self.weights @ x)

    def subgradient(self, x):
        return self.weights.copy()

    def _prox(self, v, gamma):
        return v - gamma * self.weights


class L1Regularizer(Regularizer):
    """``G(x) = lam * ||x||_1``."""

    def __init__(self, lam, dim=None):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)
        self.bound = None if dim is None else self.lam * np.sqrt(dim)

    def value(self, x):
        return self.lam * float(np.sum(np.abs(x)))

    def subgradient(self, x):
        return self.lam * np.sign(x)

    def _prox(self, v, gamma):
        t = gamma * self.lam
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


# -- the assembled problem ---------------------------------------------------

class DistributedProblem:
    """Costs of the ``I`` agents plus the shared ``G`` and ``K``.

    ``surrogates`` maps names (e.g. ``"structured"``) to factories
    ``(agent_index, tau) -> SurrogateModel`` that an application wants to
    expose in addition to the generic surrogate kinds. ``truth`` holds the
    ground-truth parameter when known.
    """

    def __init__(self, costs, regularizer=None, feasible=None, surrogates=None, truth=None, name=""):
        costs = list(costs)
        if not costs:
            raise ValueError("need at least one agent")
        dim = costs[0].dim
        if any(c.dim != dim for c in costs):
            raise ValueError("all local costs must share the dimension")
        self.costs = costs
        self.regularizer = ZeroRegularizer() if regularizer is None else regularizer
        self.feasible = RealSpace(dim) if feasible is None else feasible
        if self.feasible.dim != dim:
            raise ValueError("feasible set dimension does not match the costs")
        self.surrogates = dict(surrogates or {})
        self.truth = None if truth is None else check_vector(truth, dim, "truth")
        self.name = name

    @property
    def n_agents(self):
        return len(self.costs)

    @property
    def dim(self):
        return self.costs[0].dim

    @property
    def lipschitz_max(self):
        """``L^max`` from the cost hints, or None if any hint is missing."""
        hints = [c.lipschitz for c in self.costs]
        return None if any(h is None for h in hints) else max(hints)

    def smooth_value(self, x):
        return sum(c.value(x) for c in self.costs)

    def value(self, x):
        return self.smooth_value(x) + self.regularizer.value(x)

    def local_gradients(self, X):
        """Row ``i`` holds ``grad f_i(X[i])``."""
        return np.stack([c.gradient(x) for c, x in zip(self.costs, X)])

    def prox_step(self, v, gamma=1.0):
        """``prox_{gamma (G + indicator K)}(v)``."""
        return self.regularizer.prox(v, gamma, self.feasible)


def sum_gradient(problem, x):
    """``grad F(x) = sum_i grad f_i(x)``."""
    x = np.asarray(x, dtype=float)
    return np.sum([c.gradient(x) for c in problem.costs], axis=0)


def stationarity_residual(problem, x):
    """``||x - prox_{G + indicator K}(x - grad F(x))||_inf``.

    With ``G = 0`` this is the projected-gradient residual; it vanishes
    exactly at stationary points in both cases.
    """
    x = np.asarray(x, dtype=float)
    step = problem.prox_step(x - sum_gradient(problem, x), 1.0)
    return float(np.max(np.abs(x - step)))


def gradient_check(cost, points, rel_tol=1e-5):
    """Largest relative mismatch between ``cost.gradient`` and central
    differences with step ``1e-6 (1 + ||x||)``; raises if above ``rel_tol``."""
    worst = 0.0
    for x in np.atleast_2d(points):
        h = 1e-6 * (1.0 + np.linalg.norm(x))
        fd = np.empty(cost.dim)
        for k in range(cost.dim):
            e = np.zeros(cost.dim)
            e[k] = h
            fd[k] = (cost.value(x + e) - cost.value(x - e)) / (2 * h)
        g = cost.gradient(x)
        err = np.linalg.norm(g - fd) / (1.0 + np.linalg.norm(g))
        worst = max(worst, err)
    if worst > rel_tol:
        raise AssertionError(f"gradient mismatch {worst:.3e} exceeds {rel_tol:.1e}")
    return worst


def lipschitz_estimate(cost, points):
    """Largest difference quotient ``||grad f(a) - grad f(b)|| / ||a - b||``
    over consecutive pairs of ``points``.

    A lower bound on the gradient Lipschitz constant over the sampled region
    only; on unbounded sets no finite sample certifies the assumption.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grads = np.stack([cost.gradient(x) for x in pts])
    dx = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    dg = np.linalg.norm(np.diff(grads, axis=0), axis=1)
    keep = dx > 0
    return float(np.max(dg[keep] / dx[keep], initial=0.0))


def sample_feasible(feasible, size, rng):
    """Uniform draws over the bounding box, projected onto the set; sets
    without a finite bounding box use projected standard Gaussians."""
    box = feasible.bounding_box()
    if box is not None and np.all(np.isfinite(box[0])) and np.all(np.isfinite(box[1])):
        pts = rng.uniform(box[0], box[1], size=(size, feasible.dim))
    else:
        pts = rng.standard_normal((size, feasible.dim))
    if isinstance(feasible, (Box, RealSpace)):
        return pts
    return np.stack([feasible.project(p) for p in pts])
