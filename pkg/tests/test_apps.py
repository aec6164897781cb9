import io

import numpy as np
import pytest
from scipy.optimize import minimize
from sklearn.linear_model import Lasso

from nextsca.apps import (
    BUILDERS,
    build_cartography,
    build_flow_control,
    build_localization,
    build_sparse_ml,
    gaussian_sparse_ml,
    random_flow_control,
)
from nextsca.apps.cartography import active_bases, path_loss, power_profile, rectangular_bases
from nextsca.apps.flow_control import dc_convex_part, dc_linearized_part, sigmoid, utility_cost
from nextsca.apps.localization import REFERENCE_TARGETS, LocalizationPLSurrogate, pl_matrix
from nextsca.apps.noise import min_snr_db, noise_variance_for_snr
from nextsca.apps.sparse_ml import GaussianLinearModel, flat_likelihood
from nextsca.baseline_analysis import centralized_solve
from nextsca.graph import complete_graph, constant_schedule, ring_graph
from nextsca.problem import Box, gradient_check, stationarity_residual
from nextsca.solver import NEXT
from nextsca.surrogate import Subproblem


def test_builders_registry():
    assert set(BUILDERS) == {"localization", "cartography", "flow_control", "sparse_ml"}


def test_snr_convention_round_trips(rng):
    clean = rng.uniform(0.5, 2.0, (4, 7))
    var = noise_variance_for_snr(clean, -20.0)
    assert min_snr_db(clean, var) == pytest.approx(-20.0)


# -- localization ------------------------------------------------------------

def test_localization_defaults_use_the_reference_targets():
    problem, truth = build_localization(I=5, N_T=3, seed=1)
    np.testing.assert_array_equal(truth, REFERENCE_TARGETS.ravel())
    assert problem.dim == 6
    assert problem.instance.noise_variance > 0


def test_noiseless_localization_cost_vanishes_at_the_truth(rng):
    problem, truth = build_localization(I=6, N_T=2, snr_db=None, seed=2)
    assert problem.value(truth) == pytest.approx(0.0, abs=1e-24)
    assert stationarity_residual(problem, truth) < 1e-15
    for c in problem.costs:
        gradient_check(c, rng.uniform(0, 1, (3, 4)))


def test_pl_matrix_and_surrogate_curvature():
    w = np.array([0.3, 0.4])
    np.testing.assert_allclose(pl_matrix(w), 4 * np.outer(w, w) + 0.5 * np.eye(2))
    problem, _ = build_localization(I=3, N_T=1, snr_db=None, seed=0)
    model = LocalizationPLSurrogate(problem.costs[0], tau=10.0)
    # the convex part contributes its Hessian 2A to the subproblem matrix
    np.testing.assert_allclose(model.M, 2 * model.A + 10 * np.eye(2))


def test_localization_best_response_satisfies_optimality(rng):
    problem, _ = build_localization(I=4, N_T=2, snr_db=None, seed=0)
    model = problem.surrogates["structured"](1, 10.0)
    for _ in range(50):
        anchor = rng.uniform(0, 1, 4)
        pi = rng.standard_normal(4) * 20
        x = model.best_response(anchor, pi, problem.regularizer, problem.feasible)
        sub = Subproblem(anchor, pi, model, problem.regularizer, problem.feasible)
        assert sub.residual(x) < 1e-12


def test_localization_instance_validation():
    with pytest.raises(ValueError):
        build_localization(I=0)
    with pytest.raises(ValueError, match="SNR"):
        build_localization(snr_db=-np.inf)


def test_localization_manifest_mentions_the_seed():
    problem, _ = build_localization(I=3, N_T=1, seed=11)
    buf = io.StringIO()
    problem.instance.manifest(buf)
    assert "seed 11" in buf.getvalue()


# -- cartography -------------------------------------------------------------

def test_reference_bands_select_the_documented_bases():
    np.testing.assert_array_equal(active_bases(10, (0.1, 0.4)), [1, 2, 3])
    np.testing.assert_array_equal(active_bases(10, (0.5, 0.9)), [5, 6, 7, 8])
    x = power_profile(10, [(0.1, 0.4), (0.5, 0.9)], [1.0, 0.5]).reshape(2, 10)
    np.testing.assert_allclose(x.sum(axis=1), [1.0, 0.5])
    np.testing.assert_allclose(x[0, 1:4], 1 / 3)
    np.testing.assert_allclose(x[1, 5:9], 0.125)


def test_rectangular_bases_partition_the_channels():
    psi, freqs = rectangular_bases(10, 30)
    np.testing.assert_array_equal(psi.sum(axis=1), 1.0)
    np.testing.assert_array_equal(psi.sum(axis=0), 3.0)
    assert freqs[0] == 15.0 and freqs[-1] == 30.0
    # every basis covers a contiguous run of channels
    for b in range(10):
        idx = np.flatnonzero(psi[:, b])
        assert np.all(np.diff(idx) == 1)


def test_path_loss():
    g = path_loss(np.array([[0.0, 0.0], [3.0, 4.0]]), np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(g[:, 0], [1.0, 1 / 26])


def test_cartography_oracle_agrees_with_lbfgsb():
    problem, truth = build_cartography(I=6, N_s=2, N_b=4, N_f=12, seed=5)
    sol = centralized_solve(problem, tol=1e-11, restarts=2)
    B = np.vstack(problem.instance.regressors)
    phi = problem.instance.measurements.ravel()
    lam = problem.instance.lam

    def obj(x):
        r = phi - B @ x
        return r @ r + lam * x.sum(), -2 * B.T @ r + lam

    res = minimize(obj, np.ones(8), jac=True, bounds=[(0, 5)] * 8, method="L-BFGS-B",
                   options={"ftol": 1e-16, "gtol": 1e-13, "maxiter": 10_000})
    np.testing.assert_allclose(sol.point, res.x, atol=1e-6)
    assert sol.objective <= res.fun + 1e-12


def test_noiseless_cartography_recovers_the_truth():
    problem, truth = build_cartography(I=8, N_s=2, N_b=4, N_f=12, lam=0.0, snr_db=None, seed=1)
    assert problem.value(truth) == pytest.approx(0.0, abs=1e-20)
    sol = centralized_solve(problem, tol=1e-12, restarts=2)
    np.testing.assert_allclose(sol.point, truth, atol=1e-8)


def test_cartography_with_extra_sources():
    problem, truth = build_cartography(I=4, N_s=3, N_b=5, N_f=10, seed=2)
    assert truth.size == 15
    assert truth.reshape(3, 5).sum(axis=1)[2] == pytest.approx(0.5)


# -- flow control ------------------------------------------------------------

def test_sigmoid_split_is_a_difference_of_convex_functions():
    u = np.linspace(-8, 4, 2001)
    np.testing.assert_allclose(dc_linearized_part(u) - dc_convex_part(u), sigmoid(u), atol=1e-12)
    for part in (dc_convex_part, dc_linearized_part):
        second = np.diff(part(u), 2)
        assert np.all(second >= -1e-12)


def test_utility_cost_is_the_negated_sigmoid(rng):
    cost = utility_cost(3, 1, 2.0, -1.0)
    x = rng.uniform(0, 2, 3)
    assert cost.value(x) == pytest.approx(-sigmoid(2 * x[1] - 1))
    gradient_check(cost, rng.uniform(0, 2, (4, 3)))


def test_infeasible_capacities_are_reported():
    with pytest.raises(ValueError, match="link 0"):
        build_flow_control([0.5], [[0], [0]], lower=0.3, upper=1.0, alpha=1.0, beta=0.0)
    with pytest.raises(ValueError, match="unknown link"):
        build_flow_control([1.0], [[0], [3]], lower=0.0, upper=1.0, alpha=1.0, beta=0.0)


def test_symmetric_sources_split_the_link_evenly():
    # slope 2, offset 0: every utility is concave on the feasible rates
    problem = build_flow_control([1.0], [[0], [0]], lower=0.0, upper=1.0, alpha=2.0, beta=0.0)
    est = NEXT(surrogate="structured", tau=1.0, alpha0=1.0, mu=0.001, max_iter=400, tol=1e-6,
               random_state=0).fit(problem, constant_schedule(complete_graph(2)))
    np.testing.assert_allclose(est.x_, [0.5, 0.5], atol=1e-4)
    assert problem.feasible.contains(est.x_)


def test_random_flow_control_reaches_a_stationary_point():
    problem = random_flow_control(n_sources=5, n_links=4, seed=0)
    est = NEXT(surrogate="structured", tau=1.0, alpha0=1.0, mu=0.001, max_iter=400, tol=1e-5,
               random_state=0).fit(problem, constant_schedule(ring_graph(5, directed=False)))
    assert est.trace_.final.J <= 1e-5
    assert problem.feasible.contains(est.x_, 1e-8)
    best = centralized_solve(problem, tol=1e-9, restarts=5)
    assert problem.value(est.x_) >= best.objective - 1e-6


# -- sparse maximum likelihood -----------------------------------------------

def lasso_oracle(problem, lam, sigma2):
    B = np.vstack([m.B for m in problem.models])
    phi = np.concatenate([m.phi for m in problem.models])
    n = B.shape[0]
    # sum_i ||phi_i - B_i x||^2 / (2 sigma2) + lam ||x||_1, rescaled to sklearn's objective
    model = Lasso(alpha=lam * sigma2 / n, fit_intercept=False, tol=1e-14, max_iter=1_000_000)
    return model.fit(B, phi).coef_


def test_centralized_sparse_ml_matches_sklearn_lasso():
    problem, _ = gaussian_sparse_ml(I=4, dim=8, rows=6, lam=0.5, seed=3)
    sol = centralized_solve(problem, tol=1e-12, restarts=3)
    np.testing.assert_allclose(sol.point, lasso_oracle(problem, 0.5, 0.5), atol=1e-8)


def test_next_solves_the_distributed_lasso():
    problem, truth = gaussian_sparse_ml(I=5, dim=10, rows=8, lam=0.5, seed=0)
    # the local regressors are rank deficient, so the proximal weight carries
    # all the curvature in their null space
    est = NEXT(surrogate="structured", tau=100.0, alpha0=0.5, mu=0.01, max_iter=3000, tol=1e-10,
               random_state=0).fit(problem, constant_schedule(ring_graph(5, directed=False)))
    oracle = lasso_oracle(problem, 0.5, 0.5)
    np.testing.assert_allclose(est.x_, oracle, atol=1e-7)
    assert np.count_nonzero(np.abs(oracle) > 1e-9) < 10


def test_generic_log_likelihood_oracles_are_linearized():
    problem, _ = gaussian_sparse_ml(I=3, dim=4, rows=6, seed=1, quadratic=False)
    model = problem.surrogates["structured"](0, 1.0)
    assert model.kind == "linearize"
    quad, _ = gaussian_sparse_ml(I=3, dim=4, rows=6, seed=1)
    assert quad.surrogates["structured"](0, 1.0).kind == "keep_convex"
    x = np.linspace(-1, 1, 4)
    assert problem.value(x) == pytest.approx(quad.value(x))


def test_sparse_ml_checks_oracle_gradients():
    class Broken(GaussianLinearModel):
        def gradient(self, x):
            return 2 * super().gradient(x)

    with pytest.raises(AssertionError, match="gradient mismatch"):
        build_sparse_ml([Broken(np.eye(2), [1.0, 0.0])], lam=0.1)


def test_uninformative_likelihoods_give_the_zero_estimate():
    problem = build_sparse_ml([flat_likelihood(3), flat_likelihood(3)], lam=1.0,
                              feasible=Box(-1, 1, dim=3))
    sol = centralized_solve(problem, restarts=2)
    np.testing.assert_array_equal(sol.point, np.zeros(3))
