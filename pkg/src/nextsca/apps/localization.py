"""Cooperative multi-target localization from squared-distance measurements.

Agent ``i`` at position ``w_i`` observes ``phi_it ~ ||x_t - w_i||^2 + noise``
for every target ``t`` and owns the quartic cost

    f_i(x) = sum_t (phi_it - ||x_t - w_i||^2)^2.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .._validation import check_positive_int, check_rng
from ..problem import Box, DistributedProblem, RealSpace, SmoothLocalCost, ZeroRegularizer
from ..surrogate import LinearizedSurrogate, SurrogateModel
from .noise import noise_variance_for_snr

REFERENCE_TARGETS = np.array([[0.03, 0.85], [0.86, 0.5], [0.6, 0.01]])
DEFAULT_TAU = 10.0


class LocalizationCost(SmoothLocalCost):
    def __init__(self, position, measurements):
        self.position = np.asarray(position, dtype=float)
        self.measurements = np.asarray(measurements, dtype=float)
        self.p = self.position.size
        self.n_targets = self.measurements.size
        super().__init__(self.p * self.n_targets)

    def _residuals(self, x):
        d = x.reshape(self.n_targets, self.p) - self.position
        return d, self.measurements - np.sum(d * d, axis=1)

    def value(self, x):
        _, r = self._residuals(x)
        return float(r @ r)

    def gradient(self, x):
        d, r = self._residuals(x)
        return (-4.0 * r[:, None] * d).ravel()

    def hessian(self, x):
        d, r = self._residuals(x)
        H = np.zeros((self.dim, self.dim))
        for t in range(self.n_targets):
            s = slice(t * self.p, (t + 1) * self.p)
            H[s, s] = -4.0 * r[t] * np.eye(self.p) + 8.0 * np.outer(d[t], d[t])
        return H


def pl_matrix(position):
    """``A_i = 4 w w' + 2 ||w||^2 I``: the convex quadratic part of each summand."""
    w = np.asarray(position, dtype=float)
    return 4.0 * np.outer(w, w) + 2.0 * (w @ w) * np.eye(w.size)


def pl_vector(position, anchor_t, measurement):
    """``b_it`` at the anchor ``x_t[n]``, the slope of the linearized remainder."""
    w = np.asarray(position, dtype=float)
    a = np.asarray(anchor_t, dtype=float)
    return 4.0 * (w @ w) * w - 4.0 * (a @ a - measurement) * (a - w) + 8.0 * (w @ a) * a


def _box_kkt(M, q, x, lo, hi, tol):
    grad = M @ x - q
    scale = tol * (1.0 + np.abs(q).max() + np.abs(M).max())
    if np.any(x < lo - 1e-14) or np.any(x > hi + 1e-14):
        return False
    at_lo = x <= lo
    at_hi = x >= hi
    free = ~(at_lo | at_hi)
    return bool(np.all(np.abs(grad[free]) <= scale) and np.all(grad[at_lo] >= -scale)
                and np.all(grad[at_hi] <= scale))


def _edge_minimizer(M, q, fixed_coord, value):
    """Minimize ``x'Mx/2 - q'x`` over the line where ``x[fixed_coord] = value`` (p = 2)."""
    k = 1 - fixed_coord
    free = (q[k] - M[k, fixed_coord] * value) / M[k, k]
    x = np.empty(2)
    x[fixed_coord] = value
    x[k] = free
    return x


def _five_case(M, q, lo, hi):
    xh = np.linalg.solve(M, q)
    in1 = lo[0] <= xh[0] <= hi[0]
    in2 = lo[1] <= xh[1] <= hi[1]
    if in1 and xh[1] < lo[1]:
        return _edge_minimizer(M, q, 1, lo[1])
    if in1 and xh[1] > hi[1]:
        return _edge_minimizer(M, q, 1, hi[1])
    if in2 and xh[0] < lo[0]:
        return _edge_minimizer(M, q, 0, lo[0])
    if in2 and xh[0] > hi[0]:
        return _edge_minimizer(M, q, 0, hi[0])
    return np.clip(xh, lo, hi)


def _face_enumeration(M, q, lo, hi):
    p = q.size
    best, best_val = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=p):
        pattern = np.array(pattern)
        x = np.where(pattern == 1, lo, np.where(pattern == 2, hi, 0.0))
        free = pattern == 0
        if free.any():
            rhs = q[free] - M[np.ix_(free, ~free)] @ x[~free]
            x[free] = np.linalg.solve(M[np.ix_(free, free)], rhs)
            if np.any(x[free] < lo[free]) or np.any(x[free] > hi[free]):
                continue
        val = 0.5 * x @ M @ x - q @ x
        if val < best_val:
            best, best_val = x, val
    return best


def box_best_response(M, q, lo, hi, tol=1e-12):
    """``argmin x'Mx/2 - q'x`` over ``[lo, hi]`` for a small positive definite ``M``.

    Clamp the free minimizer and accept it if the box KKT conditions hold;
    otherwise (p = 2) try the single-edge minimizers of the five-case rule;
    otherwise enumerate all faces of the box, which is exact in any
    dimension. Returns the point and the route that produced it.
    """
    M = np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), q.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), q.shape)
    x = np.clip(np.linalg.solve(M, q), lo, hi)
    if _box_kkt(M, q, x, lo, hi, tol):
        return x, "clamp"
    if q.size == 2:
        x = _five_case(M, q, lo, hi)
        if _box_kkt(M, q, x, lo, hi, tol):
            return x, "edge"
    return _face_enumeration(M, q, lo, hi), "faces"


class LocalizationPLSurrogate(SurrogateModel):
    """Keep the convex quadratic part of each quartic summand and linearize
    the rest:

        sum_t x_t'A x_t - b_t(a)'(x_t - a_t) + tau/2 ||x - a||^2.

    Its gradient ``2 A x_t - b_t + tau (x_t - a_t)`` equals ``grad f_i`` at
    the anchor, so the per-target Hessian is ``2 A + tau I``.
    """

    kind = "localization_pl"

    def __init__(self, cost, tau=DEFAULT_TAU):
        super().__init__(cost, tau)
        self.A = pl_matrix(cost.position)
        self.M = 2.0 * self.A + self.tau * np.eye(cost.p)

    @property
    def modulus(self):
        return self.tau + 2.0 * float(np.linalg.eigvalsh(self.A)[0])

    def _b(self, anchor):
        a = anchor.reshape(self.cost.n_targets, self.cost.p)
        return np.stack([pl_vector(self.cost.position, a[t], self.cost.measurements[t])
                         for t in range(self.cost.n_targets)])

    def value(self, x, anchor):
        xt = x.reshape(self.cost.n_targets, self.cost.p)
        b = self._b(anchor)
        d = x - anchor
        quad = np.einsum("ti,ij,tj->", xt, self.A, xt)
        return float(quad - np.sum(b * (xt - anchor.reshape(xt.shape))) + 0.5 * self.tau * d @ d)

    def gradient(self, x, anchor):
        xt = x.reshape(self.cost.n_targets, self.cost.p)
        at = anchor.reshape(xt.shape)
        return (2.0 * xt @ self.A - self._b(anchor) + self.tau * (xt - at)).ravel()

    def quadratic(self, anchor):
        H = np.kron(np.eye(self.cost.n_targets), self.M)
        c = -(self._b(anchor) + self.tau * anchor.reshape(self.cost.n_targets, self.cost.p)).ravel()
        return H, c

    def curvature_bound(self, anchor):
        return float(np.linalg.eigvalsh(self.M)[-1])

    def best_response(self, anchor, pi, regularizer, feasible):
        if not isinstance(regularizer, ZeroRegularizer):
            return None
        nt, p = self.cost.n_targets, self.cost.p
        rhs = (self._b(anchor) - pi.reshape(nt, p) + self.tau * anchor.reshape(nt, p))
        if isinstance(feasible, RealSpace):
            return np.linalg.solve(self.M, rhs.T).T.ravel()
        if not isinstance(feasible, Box):
            return None
        lo = feasible.lower.reshape(nt, p)
        hi = feasible.upper.reshape(nt, p)
        return np.concatenate([box_best_response(self.M, rhs[t], lo[t], hi[t])[0] for t in range(nt)])


@dataclass
class LocalizationInstance:
    positions: np.ndarray
    truth: np.ndarray
    measurements: np.ndarray
    noise_variance: float
    snr_db: float
    seed: int
    tau: float

    def manifest(self, stream):
        """Plain-text dump sufficient to rebuild the instance exactly."""
        stream.write("# localization instance\n")
        stream.write(f"seed {self.seed}\nsnr_db {self.snr_db}\n")
        stream.write(f"noise_variance {self.noise_variance:.17g}\ntau {self.tau:.17g}\n")
        for name, arr in (("positions", self.positions), ("truth", self.truth),
                          ("measurements", self.measurements)):
            stream.write(f"{name} {arr.shape[0]}\n")
            for row in np.atleast_2d(arr):
                stream.write(" ".join(f"{v:.17g}" for v in np.atleast_1d(row)) + "\n")


def build_localization(I=30, N_T=3, positions=None, targets=None, snr_db=-20.0, seed=0,
                       tau=DEFAULT_TAU, p=2, bounds=(0.0, 1.0)):
    """Localization problem with the partial-linearization (``"structured"``)
    and full-linearization (``"linearize"``) surrogates registered.

    ``snr_db=None`` gives noiseless measurements. Sensors are uniform over the
    box when ``positions`` is None; the first targets default to the three
    reference positions (extra targets are drawn uniformly).

    Returns ``(problem, truth)``; the full instance is ``problem.instance``.
    """
    I = check_positive_int(I, "I")
    N_T = check_positive_int(N_T, "N_T")
    if snr_db is not None and snr_db == -np.inf:
        raise ValueError("SNR of -inf dB means pure noise")
    rng = check_rng(seed)
    lo, hi = bounds
    pos = rng.uniform(lo, hi, size=(I, p)) if positions is None else np.asarray(positions, dtype=float)
    if targets is None:
        base = REFERENCE_TARGETS if p == 2 else np.empty((0, p))
        extra = rng.uniform(lo, hi, size=(max(N_T - len(base), 0), p))
        targets = np.vstack([base[:N_T], extra])
    targets = np.asarray(targets, dtype=float).reshape(N_T, p)
    clean = np.sum((targets[None, :, :] - pos[:, None, :]) ** 2, axis=2)
    if snr_db is None:
        var = 0.0
        meas = clean
    else:
        var = noise_variance_for_snr(clean, snr_db)
        meas = clean + np.sqrt(var) * rng.standard_normal(clean.shape)
    costs = [LocalizationCost(pos[i], meas[i]) for i in range(I)]
    truth = targets.ravel()
    problem = DistributedProblem(
        costs,
        ZeroRegularizer(),
        Box(lo, hi, dim=p * N_T),
        surrogates={
            "structured": lambda i, t: LocalizationPLSurrogate(costs[i], t),
            "linearize": lambda i, t: LinearizedSurrogate(costs[i], t),
        },
        truth=truth,
        name="localization",
    )
    problem.instance = LocalizationInstance(pos, truth, meas, var, snr_db, seed, tau)
    problem.default_tau = tau
    return problem, truth
