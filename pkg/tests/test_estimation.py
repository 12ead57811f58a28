import warnings

import numpy as np
import pytest

from factorsens.bounds import Estimand, bias_bound, partial_r2_treatment
from factorsens.confounder import TreatmentContrast, conditional_moments
from factorsens.errors import DataError, FactorCountWarning, HeywoodWarning, UnsupportedMethod
from factorsens.estimation import (
    Dataset,
    fit_g_check,
    fit_outcome_model,
    fit_treatment_model,
    ml_factor_analysis,
    select_num_factors,
)
from factorsens.regression import RegressOptions
from factorsens.simulation import SimConfig, default_config, generate_dataset, population_g_check

from oracles import relative_frobenius


def data_with_correlation(C, n, seed):
    """Data whose sample correlation equals ``C`` exactly."""
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, C.shape[0]))
    Z -= Z.mean(axis=0)
    L = np.linalg.cholesky(np.cov(Z, rowvar=False))
    W = Z @ np.linalg.inv(L).T
    return W @ np.linalg.cholesky(C).T


# ------------------------------------------------------------ factor analysis

def test_fa_identity_correlation():
    fit = ml_factor_analysis(np.eye(5), 1)
    np.testing.assert_allclose(fit.loadings_std, 0, atol=1e-4)
    np.testing.assert_allclose(fit.uniquenesses, 1, atol=1e-4)


def test_fa_exact_one_factor():
    lam = np.array([0.9, 0.8, 0.7, 0.6])
    C = np.outer(lam, lam) + np.diag(1 - lam**2)
    fit = ml_factor_analysis(C, 1)
    np.testing.assert_allclose(fit.loadings_std @ fit.loadings_std.T, np.outer(lam, lam), atol=1e-6)
    np.testing.assert_allclose(fit.uniquenesses, 1 - lam**2, atol=1e-6)


def test_fa_exact_two_factor_reconstruction():
    rng = np.random.default_rng(1)
    L = rng.uniform(-0.7, 0.7, (8, 2))
    C = L @ L.T
    C += np.diag(1 - np.diag(C))
    fit = ml_factor_analysis(C, 2)
    assert np.linalg.norm(fit.implied_corr() - C) <= 1e-5
    assert np.all(np.sum(fit.loadings_std**2, axis=1) <= 1 + 1e-8)
    assert np.all((fit.uniquenesses > 0) & (fit.uniquenesses <= 1))


def test_fa_heywood_is_flagged():
    lam = np.array([0.999, 0.9, 0.8, 0.7, 0.6])
    C = np.outer(lam, lam)
    np.fill_diagonal(C, 1.0)
    with pytest.warns(HeywoodWarning):
        fit = ml_factor_analysis(C, 1)
    assert fit.heywood
    assert fit.uniquenesses.min() >= 0.005 - 1e-12


def test_fa_rejects_inadmissible_m():
    with pytest.raises(ValueError):
        ml_factor_analysis(np.eye(5), 3)


# -------------------------------------------------------------- treatments

def test_treatment_loadings_recovered(large_fit):
    B = large_fit.cfg.B_true
    assert relative_frobenius(large_fit.tm.B @ large_fit.tm.B.T, B @ B.T) <= 0.05
    assert abs(large_fit.tm.sigma2_t_given_u - 2.0) <= 0.1


def test_treatment_scale_equivariance():
    data = generate_dataset(default_config(n=3000, seed=4))
    scaled = Dataset(10 * data.T, data.Y)
    a, b = fit_treatment_model(data, 3), fit_treatment_model(scaled, 3)
    np.testing.assert_allclose(b.B @ b.B.T, 100 * a.B @ a.B.T, rtol=1e-6, atol=1e-8)
    d = np.arange(1.0, 11.0)
    assert abs(partial_r2_treatment(a, d) - partial_r2_treatment(b, d)) <= 1e-6


def test_treatment_null_model():
    cfg = SimConfig(np.zeros((10, 1)), np.zeros((7, 1)), 2.0, 2.0, "zero", n=20_000, seed=3)
    data = generate_dataset(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HeywoodWarning)
        tm = fit_treatment_model(data, 1)
    assert abs(tm.sigma2_t_given_u - data.T.var(axis=0, ddof=1).mean()) <= 0.05
    assert np.linalg.norm(tm.B) <= 0.3


# --------------------------------------------------------------- regression

def test_regression_linear_truth_interpolated():
    rng = np.random.default_rng(0)
    T = rng.standard_normal((500, 6))
    Y = T @ rng.standard_normal((6, 3)) + 0.7
    fit = fit_g_check(Dataset(T, Y))
    assert np.max(np.abs(fit.residuals)) <= 1e-6


def test_regression_poly2_linear_truth():
    rng = np.random.default_rng(1)
    T = rng.standard_normal((400, 4))
    Y = T @ rng.standard_normal((4, 3))
    fit = fit_g_check(Dataset(T, Y), RegressOptions(method="poly2"))
    assert np.max(np.abs(fit.residuals)) <= 1e-3


def test_regression_population_surface(large_fit):
    # outcome 2 at t = e9 against the population observable regression
    e9 = np.eye(10)[8]
    g = large_fit.om.g_check
    est = g(e9)[1] - g(np.zeros(10))[1]
    truth = population_g_check(large_fit.cfg, e9)[1] - population_g_check(large_fit.cfg, np.zeros(10))[1]
    assert abs(est - truth) <= 0.02


def test_regression_permutation_invariant():
    data = generate_dataset(default_config(n=2000, seed=9))
    perm = np.random.default_rng(0).permutation(data.n)
    a = fit_g_check(data)
    b = fit_g_check(Dataset(data.T[perm], data.Y[perm]))
    grid = np.random.default_rng(1).standard_normal((50, 10)) * 2
    np.testing.assert_allclose(a.predict(grid), b.predict(grid), atol=1e-8)


def test_regression_unknown_method():
    with pytest.raises(UnsupportedMethod):
        RegressOptions(method="spline3")


# ------------------------------------------------------------------ outcomes

def test_outcome_loadings_recovered(large_fit):
    G = large_fit.cfg.Gamma_true
    assert relative_frobenius(large_fit.om.Gamma @ large_fit.om.Gamma.T, G @ G.T) <= 0.05


def test_outcome_residual_structure(large_fit):
    om = large_fit.om
    implied = om.Gamma @ om.Gamma.T + om.sigma2_y * np.eye(om.q)
    assert relative_frobenius(implied, om.residual_cov) <= 0.05


def test_outcome_null_confounding():
    B = default_config().B_true
    cfg = SimConfig(B, np.zeros((7, 3)), 2.0, 2.0, "builtin_eq15", n=20_000, seed=5)
    data = generate_dataset(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HeywoodWarning)
        tm = fit_treatment_model(data, 3)
        om = fit_outcome_model(data, 3)
    assert np.linalg.norm(om.Gamma @ om.Gamma.T) <= 0.2
    est = Estimand(np.eye(7)[1], TreatmentContrast(np.eye(10)[2], np.zeros(10)))
    assert bias_bound(om, conditional_moments(tm), est) <= 0.1


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.ones((5, 3)), np.ones((5, 2)))
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan, 1.0, 2.0]] * 5), np.random.default_rng(0).standard_normal((5, 1)))


# ----------------------------------------------------------- factor counting

def test_eigen_compound_symmetry():
    C = np.full((5, 5), 0.8)
    np.fill_diagonal(C, 1.0)
    w = np.linalg.eigvalsh(C)
    np.testing.assert_allclose(sorted(w), [0.2] * 4 + [4.2], atol=1e-12)
    X = data_with_correlation(C, 500, 0)
    assert select_num_factors(X, "eigen").m == 1


def test_eigen_identity_returns_zero():
    X = data_with_correlation(np.eye(4), 300, 1)
    with pytest.warns(FactorCountWarning):
        assert select_num_factors(X, "eigen").m == 0


def test_bic_two_factors():
    data = generate_dataset(default_config(n=5000, seed=1, m=2))
    res = select_num_factors(data.T, "bic")
    assert res.m == 2
    assert res.max_admissible == 6


@pytest.mark.parametrize("method", ["vss.comp1", "vss.comp2", "map", "adjbic"])
def test_out_of_scope_count_methods(method):
    with pytest.raises(UnsupportedMethod):
        select_num_factors(np.random.default_rng(0).standard_normal((50, 5)), method)


def test_parallel_deterministic():
    data = generate_dataset(default_config(n=500, seed=2, m=2))
    a = select_num_factors(data.T, "parallel", seed=3)
    b = select_num_factors(data.T, "parallel", seed=3)
    assert a.m == b.m and a.details["reference"] == b.details["reference"]
