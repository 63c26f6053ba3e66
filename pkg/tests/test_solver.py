import numpy as np
import pytest
from scipy.optimize import minimize

from lori import (
    CountTable,
    CovariateSet,
    DegenerateOffsetError,
    ModelParams,
    SolverConfig,
    ValidationError,
    build_natural_params,
    data_fit,
    fit,
    fit_null_model,
    fit_path,
    interaction_projector,
    nuclear_norm,
    null_threshold_stat,
    update_coefficients,
    update_interaction_step,
    update_offset,
)
from lori.linalg import singular_value_soft_threshold

from conftest import random_instance

TIGHT = SolverConfig(tol=1e-12, max_outer_iters=5000)


def test_offset_closed_form_example():
    t = CountTable([[1, 3], [2, 2]], np.ones((2, 2), bool))
    mu = update_offset(t, CovariateSet.empty(2, 2), ModelParams.zeros(2, 2, 0, 0))
    assert mu == pytest.approx(np.log(2.0), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_offset_is_stationary(seed):
    r = np.random.default_rng(seed)
    table, cov = random_instance(r, miss=0.3)
    params = ModelParams(0.0, r.normal(size=1), r.normal(size=1), interaction_projector(r.normal(0, 0.3, (8, 5))))
    mu = update_offset(table, cov, params)
    x = build_natural_params(params.replace(mu=mu), cov)
    score = np.sum(np.exp(x[table.mask]) - table.values[table.mask])
    assert abs(score) <= 1e-9 * table.values[table.mask].sum()
    h = 1e-4
    f = lambda m: data_fit(table, build_natural_params(params.replace(mu=m), cov))
    assert f(mu) <= min(f(mu - h), f(mu + h))


def test_offset_degenerate():
    t = CountTable([[0, 0], [0, 0]], np.ones((2, 2), bool))
    with pytest.raises(DegenerateOffsetError):
        update_offset(t, CovariateSet.empty(2, 2), ModelParams.zeros(2, 2, 0, 0))


def test_coefficients_without_covariates_are_empty():
    t = CountTable([[1, 2], [3, 4]], np.ones((2, 2), bool))
    a, b = update_coefficients(t, CovariateSet.empty(2, 2), ModelParams.zeros(2, 2, 0, 0))
    assert a.shape == (0,) and b.shape == (0,)


@pytest.mark.parametrize("seed", range(3))
def test_coefficients_match_generic_optimizer(seed):
    r = np.random.default_rng(seed)
    n, p = 20, 5
    cov = CovariateSet.standardize(r.normal(size=(n, 1)), None, n=n, p=p)
    theta = interaction_projector(r.normal(0, 0.3, (n, p)))
    params = ModelParams(1.0, [0.0], [], theta)
    y = r.poisson(np.exp(1.0 + 0.7 * cov.R + theta))
    table = CountTable(y, np.ones_like(y, bool))
    alpha, beta = update_coefficients(table, cov, params)

    def nll(a):
        x = 1.0 + a[0] * cov.R[:, 0][:, None] + theta
        return np.sum(np.exp(x) - y * x)

    def grad(a):
        x = 1.0 + a[0] * cov.R[:, 0][:, None] + theta
        return np.array([np.sum((np.exp(x) - y) * cov.R[:, 0][:, None])])

    ref = minimize(nll, [0.0], jac=grad, method="BFGS", options={"gtol": 1e-10}).x
    assert beta.shape == (0,)
    assert alpha[0] == pytest.approx(ref[0], abs=1e-5)


def test_interaction_step_zero_gradient_keeps_zero():
    table = CountTable(np.full((3, 2), 4), np.ones((3, 2), bool))
    cov = CovariateSet.empty(3, 2)
    params = fit_null_model(table, cov)
    theta, accepted = update_interaction_step(table, cov, params, lam=0.5, tau=1.0)
    assert accepted
    np.testing.assert_allclose(theta, 0.0, atol=1e-10)


def test_interaction_step_matches_manual_prox(rng):
    table, cov = random_instance(rng, n=6, p=4)
    params = fit_null_model(table, cov)
    lam, tau = 0.3, 0.25
    x = build_natural_params(params, cov)
    g = interaction_projector(np.exp(x) - table.values)
    expected = interaction_projector(singular_value_soft_threshold(params.theta - tau * g, tau * lam))
    theta, _ = update_interaction_step(table, cov, params, lam, tau)
    np.testing.assert_allclose(theta, expected, atol=1e-12)


def test_interaction_step_rejects_bad_arguments(rng):
    table, cov = random_instance(rng)
    params = fit_null_model(table, cov)
    with pytest.raises(ValidationError):
        update_interaction_step(table, cov, params, 1.0, 0.0)
    with pytest.raises(ValidationError):
        update_interaction_step(table, cov, params, -1.0, 1.0)


@pytest.mark.parametrize("seed", range(4))
def test_fit_trace_monotone_and_centered(seed):
    r = np.random.default_rng(seed)
    table, cov = random_instance(r, n=10, p=6, miss=0.25, theta_scale=1.0)
    lam0 = null_threshold_stat(table, cov)
    res = fit(table, cov, 0.3 * lam0)
    trace = np.array(res.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]))
    th = res.params.theta
    assert np.max(np.abs(th.sum(axis=0))) <= 1e-8
    assert np.max(np.abs(th.sum(axis=1))) <= 1e-8
    assert res.converged
    assert res.objective == trace[-1]


@pytest.mark.parametrize("seed", range(4))
def test_fit_zero_above_threshold_nonzero_below(seed):
    r = np.random.default_rng(seed)
    table, cov = random_instance(r, miss=0.2)
    lam0 = null_threshold_stat(table, cov)
    assert nuclear_norm(fit(table, cov, lam0 * 1.000001).params.theta) <= 1e-8
    assert nuclear_norm(fit(table, cov, lam0 * 0.9).params.theta) > 0


def test_fit_huge_lambda_equals_null_model(rng):
    table, cov = random_instance(rng, miss=0.1)
    null = fit_null_model(table, cov)
    res = fit(table, cov, 1e6)
    assert res.params.mu == pytest.approx(null.mu, abs=1e-8)
    np.testing.assert_allclose(res.params.alpha, null.alpha, atol=1e-8)
    np.testing.assert_allclose(res.params.beta, null.beta, atol=1e-8)
    assert np.all(res.params.theta == 0)
    assert res.effective_rank == 0


def test_fit_without_covariates_on_constant_table():
    table = CountTable(np.full((4, 3), 5), np.ones((4, 3), bool))
    res = fit(table, CovariateSet.empty(4, 3), 0.1)
    assert res.params.mu == pytest.approx(np.log(5.0), abs=1e-10)
    np.testing.assert_allclose(res.params.theta, 0.0, atol=1e-10)


def test_fit_lambda_zero_interpolates_full_table(rng):
    # n-1 row and p-1 column covariates make the unpenalized model saturated
    y = np.array([[3, 9, 4, 1], [7, 2, 5, 6], [1, 4, 8, 2]])
    table = CountTable(y, np.ones_like(y, bool))
    cov = CovariateSet.standardize(
        [[1.0, 0.0], [-0.5, 1.0], [2.0, 0.5]],
        [[0.3, 1.0, 0.0], [1.0, 0.0, 2.0], [-1.0, 1.0, 1.0], [0.0, -1.0, 0.5]],
    )
    res = fit(table, cov, 0.0, TIGHT)
    np.testing.assert_allclose(np.exp(res.natural_params(cov)), table.values, rtol=1e-4)


def test_fit_validates_inputs(rng):
    table, cov = random_instance(rng)
    with pytest.raises(ValidationError):
        fit(table, cov, -1.0)
    with pytest.raises(ValidationError):
        fit(table, CovariateSet.empty(3, 3), 1.0)
    with pytest.raises(ValidationError):
        fit(table, cov, 1.0, init=ModelParams.zeros(2, 2, 1, 1))


def test_fit_path_warm_starts_match_cold_starts(rng):
    table, cov = random_instance(rng, n=8, p=5, theta_scale=1.0)
    lam0 = null_threshold_stat(table, cov)
    grid = [0.8 * lam0, 0.5 * lam0, 0.2 * lam0]
    path = fit_path(table, cov, grid, TIGHT)
    norms = [nuclear_norm(r.params.theta) for r in path]
    assert norms[0] <= norms[1] <= norms[2]
    for lam, warm in zip(grid, path):
        cold = fit(table, cov, lam, TIGHT)
        np.testing.assert_allclose(warm.natural_params(cov), cold.natural_params(cov), atol=1e-4)


def test_fit_path_requires_decreasing_grid(rng):
    table, cov = random_instance(rng)
    with pytest.raises(ValidationError):
        fit_path(table, cov, [1.0, 2.0])
    with pytest.raises(ValidationError):
        fit_path(table, cov, [])
