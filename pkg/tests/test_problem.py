import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from nextsca.problem import (
    Box,
    DCCost,
    DistributedProblem,
    FunctionCost,
    L1Regularizer,
    LeastSquaresCost,
    LinearRegularizer,
    Polyhedron,
    QuadraticCost,
    RealSpace,
    ZeroRegularizer,
    gradient_check,
    lipschitz_estimate,
    sample_feasible,
    stationarity_residual,
    sum_gradient,
)

finite = st.floats(-10, 10, allow_nan=False)


def slsqp_projection(P, v):
    cons = [{"type": "ineq", "fun": lambda x, k=k: P.b[k] - P.A[k] @ x, "jac": lambda x, k=k: -P.A[k]}
            for k in range(P.A.shape[0])]
    res = minimize(lambda x: 0.5 * np.sum((x - v) ** 2), P.box.project(v), jac=lambda x: x - v,
                   bounds=list(zip(P.box.lower, P.box.upper)), constraints=cons, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 500})
    return res.x


def test_least_squares_cost_matches_its_definition(rng):
    B = rng.standard_normal((6, 3))
    phi = rng.standard_normal(6)
    cost = LeastSquaresCost(B, phi)
    x = rng.standard_normal(3)
    assert cost.value(x) == pytest.approx(np.sum((phi - B @ x) ** 2))
    np.testing.assert_allclose(cost.gradient(x), -2 * B.T @ (phi - B @ x))
    H, c, d = cost.quadratic_form()
    assert 0.5 * x @ H @ x + c @ x + d == pytest.approx(cost.value(x))


def test_quadratic_cost_reports_curvature():
    cost = QuadraticCost(np.diag([1.0, 4.0]), [0.0, 0.0])
    assert cost.lipschitz == 4.0
    assert cost.strong_convexity == 1.0
    indefinite = QuadraticCost(np.diag([-3.0, 2.0]), [0.0, 0.0])
    assert indefinite.strong_convexity == 0.0
    assert indefinite.lipschitz == 3.0


def test_dc_cost_is_the_difference_of_its_parts(rng):
    p = QuadraticCost(2 * np.eye(2), [1.0, 0.0])
    q = QuadraticCost(np.eye(2), [0.0, 1.0])
    f = DCCost(p, q)
    x = rng.standard_normal(2)
    assert f.value(x) == pytest.approx(p.value(x) - q.value(x))
    gradient_check(f, rng.standard_normal((3, 2)))


def test_gradient_check_catches_wrong_gradients():
    wrong = FunctionCost(2, lambda x: x @ x, lambda x: x)
    with pytest.raises(AssertionError, match="gradient mismatch"):
        gradient_check(wrong, np.ones((1, 2)))


def test_box_validation_and_projection():
    with pytest.raises(ValueError, match="empty box"):
        Box([1.0], [0.0])
    box = Box(0.0, 1.0, dim=3)
    np.testing.assert_array_equal(box.project([-1.0, 0.5, 3.0]), [0.0, 0.5, 1.0])
    assert box.contains([0.0, 1.0, 0.3])
    assert not box.contains([0.0, 1.1, 0.3])


def test_polyhedron_projection_agrees_with_slsqp(rng):
    P = Polyhedron([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]], [1.0, 1.2], 0.0, 2.0)
    for _ in range(10):
        v = rng.uniform(-1, 3, 3)
        x = P.project(v)
        assert P.contains(x)
        np.testing.assert_allclose(x, slsqp_projection(P, v), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 3, elements=finite), st.integers(0, 1000))
def test_polyhedron_projection_obeys_the_obtuse_angle_property(v, seed):
    P = Polyhedron([[1.0, 2.0, 0.0], [1.0, 0.0, -1.0]], [2.0, 0.5], -1.0, 1.0)
    x = P.project(v)
    ys = sample_feasible(P, 20, np.random.default_rng(seed))
    assert np.all((ys - x) @ (v - x) <= 1e-8 * (1 + np.abs(v).max()))


@settings(max_examples=100, deadline=None)
@given(arrays(float, 4, elements=finite), st.floats(0, 3), st.floats(0.01, 5))
def test_l1_prox_is_soft_thresholding(v, lam, gamma):
    out = L1Regularizer(lam).prox(v, gamma)
    expected = np.sign(v) * np.maximum(np.abs(v) - lam * gamma, 0.0)
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_l1_prox_on_a_box_solves_the_scalar_problems(rng):
    reg = L1Regularizer(0.7)
    box = Box(-0.5, 2.0, dim=5)
    v = rng.uniform(-3, 3, 5)
    out = reg.prox(v, 1.3, box)
    grid = np.linspace(-0.5, 2.0, 250_001)
    for k in range(5):
        obj = 0.7 * np.abs(grid) + (grid - v[k]) ** 2 / 2.6
        assert out[k] == pytest.approx(grid[np.argmin(obj)], abs=2e-5)


def test_l1_prox_on_a_polyhedron_matches_a_smooth_reformulation(rng):
    P = Polyhedron([[1.0, 1.0]], [0.5], -1.0, 1.0)
    reg = L1Regularizer(0.3)
    v = np.array([0.9, 0.8])
    out = reg.prox(v, 1.0, P)

    def obj(z):
        u, t = z[:2], z[2:]
        return 0.5 * np.sum((u - v) ** 2) + 0.3 * np.sum(t)

    cons = [{"type": "ineq", "fun": lambda z: 0.5 - z[0] - z[1]},
            {"type": "ineq", "fun": lambda z: z[2:] - z[:2]},
            {"type": "ineq", "fun": lambda z: z[2:] + z[:2]}]
    res = minimize(obj, np.zeros(4), constraints=cons, method="SLSQP",
                   bounds=[(-1, 1), (-1, 1), (0, None), (0, None)], options={"ftol": 1e-14})
    np.testing.assert_allclose(out, res.x[:2], atol=1e-6)


def test_linear_regularizer_prox_shifts_then_projects():
    reg = LinearRegularizer([1.0, -2.0])
    np.testing.assert_allclose(reg.prox([0.0, 0.0], 0.5), [-0.5, 1.0])
    np.testing.assert_allclose(reg.prox([0.0, 0.0], 0.5, Box(0.0, 0.7, dim=2)), [0.0, 0.7])


def test_zero_regularizer_prox_is_the_projection():
    box = Box(0.0, 1.0, dim=2)
    np.testing.assert_array_equal(ZeroRegularizer().prox([2.0, -1.0], 3.0, box), [1.0, 0.0])


def test_problem_rejects_inconsistent_dimensions():
    with pytest.raises(ValueError, match="share"):
        DistributedProblem([QuadraticCost(np.eye(2), [0, 0]), QuadraticCost(np.eye(3), [0, 0, 0])])
    with pytest.raises(ValueError, match="feasible"):
        DistributedProblem([QuadraticCost(np.eye(2), [0, 0])], feasible=Box(0, 1, dim=3))
    with pytest.raises(ValueError):
        DistributedProblem([])


def test_stationarity_residual_vanishes_at_the_minimizer():
    costs = [QuadraticCost(np.eye(2), [-1.0, 0.0]), QuadraticCost(np.eye(2), [0.0, -3.0])]
    box = Box(0.0, 1.0, dim=2)
    problem = DistributedProblem(costs, feasible=box)
    x_star = np.array([0.5, 1.0])
    assert stationarity_residual(problem, x_star) == 0.0
    assert stationarity_residual(problem, np.array([0.2, 0.2])) > 0.1
    np.testing.assert_allclose(sum_gradient(problem, x_star), [0.0, -1.0])


def test_sample_feasible_stays_inside(rng):
    P = Polyhedron([[1.0, 1.0]], [0.3], 0.0, 1.0)
    pts = sample_feasible(P, 50, rng)
    assert all(P.contains(p) for p in pts)
    assert sample_feasible(RealSpace(3), 4, rng).shape == (4, 3)


def test_lipschitz_estimate_is_exact_along_an_eigenvector_and_a_lower_bound_elsewhere(rng):
    cost = QuadraticCost(np.diag([1.0, 4.0]), [0.5, -1.0])
    line = np.outer(np.linspace(-2, 2, 5), [0.0, 1.0])
    assert lipschitz_estimate(cost, line) == pytest.approx(4.0)
    assert lipschitz_estimate(cost, rng.standard_normal((50, 2))) <= 4.0 + 1e-12
    assert lipschitz_estimate(cost, np.ones((3, 2))) == 0.0
