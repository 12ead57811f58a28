from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factorsens.bounds import Estimand, bias_bound
from factorsens.confounder import TreatmentContrast, TreatmentFactorModel, conditional_moments
from factorsens.errors import (
    DegenerateNC,
    IncompatibleNC,
    IncompatibleNCWarning,
    JTooLarge,
    SingularKbb,
)
from factorsens.estimation import OutcomeFactorModel
from factorsens.negcontrol import (
    build_nc_artifacts,
    compatibility_check,
    detect_point_identification,
    make_spec,
    nc_interval_multiple,
    nc_interval_single,
)
from factorsens.numlin import random_orthogonal
from factorsens.simulation import default_config, scenario_by_name, table1_scenarios, true_bias

from population import generic_artifacts, population_artifacts


def exact_models(G, B, sigma2=1.0):
    """Models whose observable regression is exactly implied by the loadings."""
    tm = TreatmentFactorModel(B, sigma2)
    cond = conditional_moments(tm)
    L = G @ cond.inv_sqrt_cov
    om = OutcomeFactorModel(G, 1.0, g_check=lambda t: L @ cond.coef @ np.asarray(t, float))
    return om, cond


def random_contrasts(rng, k, c):
    return [(rng.standard_normal(k), np.zeros(k)) for _ in range(c)]


def single_nc_bias(G, cond, est):
    # bias of the estimand under the exact model, independent of the package's bias code
    return float(est.a @ G @ cond.inv_sqrt_cov @ cond.coef @ est.delta_t)


# ------------------------------------------------------------------ artifacts

def test_null_contrast_rejected_by_spec():
    t = np.arange(8.0)
    with pytest.raises(ValueError):
        make_spec([(0, [(t, t)])])


def test_artifact_columns_are_regression_differences():
    rng = np.random.default_rng(0)
    om, cond = exact_models(rng.standard_normal((7, 3)), rng.standard_normal((8, 3)))
    pairs = [(rng.standard_normal(8), rng.standard_normal(8)) for _ in range(2)]
    est = Estimand(np.eye(7)[1], TreatmentContrast(np.eye(8)[0], np.zeros(8)))
    art = build_nc_artifacts(make_spec([(0, pairs)]), om, cond, est)
    for col, (t1, t2) in enumerate(pairs):
        np.testing.assert_array_equal(art.G_check[0][:, col], om.g_check(t1) - om.g_check(t2))
    np.testing.assert_array_equal(art.observed_nc_bias[0], art.G_check[0][0])


def test_artifacts_a_equals_b():
    rng = np.random.default_rng(1)
    om, cond = exact_models(rng.standard_normal((7, 3)), rng.standard_normal((8, 3)))
    est = Estimand(np.eye(7)[2], TreatmentContrast(np.eye(8)[0], np.zeros(8)))
    art = build_nc_artifacts(make_spec([(2, random_contrasts(rng, 8, 1))]), om, cond, est)
    assert art.K_ab[0] == pytest.approx(art.K_aa, abs=1e-14)
    assert art.K_bb[0, 0] == pytest.approx(art.K_aa, abs=1e-14)


def test_artifacts_match_true_gram(large_fit):
    sc = scenario_by_name("(NN,N)")
    art = build_nc_artifacts(sc.nc_spec(), large_fit.om, large_fit.cond, sc.estimand())
    G = large_fit.cfg.Gamma_true
    truth = G[[0, 5]] @ G[[0, 5]].T
    assert np.linalg.norm(art.K_bb - truth) <= 0.05 * np.linalg.norm(truth)


def test_kab_cauchy_schwarz():
    rng = np.random.default_rng(2)
    for _ in range(20):
        art, *_ = generic_artifacts(rng, J=2)
        for j in range(2):
            assert abs(art.K_ab[j]) <= np.sqrt(art.K_aa * art.K_bb[j, j]) + 1e-8
        assert np.all(np.linalg.eigvalsh(art.K_bb) >= -1e-12)


# --------------------------------------------------------------- compatibility

def test_full_rank_square_m_always_compatible():
    rng = np.random.default_rng(3)
    art, *_ = generic_artifacts(rng, c=3)
    art = replace(art, observed_nc_bias=[rng.standard_normal(3)])
    assert compatibility_check(art) == [True]


def test_population_compatible():
    cfg = default_config()
    for sc in table1_scenarios():
        art, *_ = population_artifacts(cfg, sc)
        assert all(compatibility_check(art))


def incompatible_artifacts():
    rng = np.random.default_rng(4)
    art, om, cond, est = generic_artifacts(rng, c=4)
    M = art.M[0]
    null = np.linalg.svd(M)[2][-1]  # orthogonal to the row space of M
    assert np.linalg.norm(M @ null) <= 1e-10
    c2 = art.observed_nc_bias[0] + 0.5 * np.linalg.norm(art.observed_nc_bias[0]) * null
    return replace(art, observed_nc_bias=[c2]), cond, est


def test_projector_counterexample_incompatible():
    art, cond, est = incompatible_artifacts()
    assert compatibility_check(art) == [False]
    with pytest.raises(IncompatibleNC):
        nc_interval_single(art, cond, est, strict=True)
    with pytest.warns(IncompatibleNCWarning):
        nc_interval_single(art, cond, est)


# ------------------------------------------------------------- single control

@pytest.mark.parametrize("name", ["(O,O)", "(O,C)"])
def test_orthogonal_mechanisms_keep_no_nc_region(name):
    art, om, cond, est = population_artifacts(default_config(), scenario_by_name(name))
    assert abs(art.K_ab[0]) <= 1e-12
    region = nc_interval_single(art, cond, est)
    bound = bias_bound(om, cond, est)
    assert abs(region.lo + bound) <= 1e-10 and abs(region.hi - bound) <= 1e-10
    assert abs(region.meta["raw_interval"][0] + bound) <= 1e-10


def test_full_contrasts_and_same_outcome_point_identify():
    rng = np.random.default_rng(5)
    G, B = rng.standard_normal((7, 3)), rng.standard_normal((8, 3))
    om, cond = exact_models(G, B)
    est = Estimand(np.eye(7)[4], TreatmentContrast(rng.standard_normal(8), np.zeros(8)))
    art = build_nc_artifacts(make_spec([(4, random_contrasts(rng, 8, 3))]), om, cond, est)
    region = nc_interval_single(art, cond, est)
    assert region.hull_width <= 1e-10
    assert abs(region.lo - single_nc_bias(G, cond, est)) <= 1e-10
    flag, reason = detect_point_identification(art)
    assert flag and "rank" in reason and "a equals b" in reason


def test_cc_population_collapses():
    cfg = default_config()
    art, om, cond, est = population_artifacts(cfg, scenario_by_name("(C,C)"))
    region = nc_interval_single(art, cond, est)
    assert region.hull_width <= 1e-3 * bias_bound(om, cond, est)
    assert region.contains(true_bias(cfg, est), slack=1e-10)
    assert detect_point_identification(art)[0]


def test_degenerate_nc_raises():
    rng = np.random.default_rng(6)
    G = rng.standard_normal((7, 3))
    G[0] = 0.0
    om, cond = exact_models(G, rng.standard_normal((8, 3)))
    est = Estimand(np.eye(7)[1], TreatmentContrast(rng.standard_normal(8), np.zeros(8)))
    art = build_nc_artifacts(make_spec([(0, random_contrasts(rng, 8, 1))]), om, cond, est)
    with pytest.raises(DegenerateNC):
        nc_interval_single(art, cond, est)


# ---------------------------------------------------------- multiple controls

def test_multiple_reduces_to_single():
    rng = np.random.default_rng(7)
    for _ in range(10):
        art, om, cond, est = generic_artifacts(rng, J=1, c=2)
        a = nc_interval_single(art, cond, est)
        b = nc_interval_multiple(art, cond, est)
        assert abs(a.lo - b.lo) <= 1e-12 and abs(a.hi - b.hi) <= 1e-12


def test_multiple_orthogonal_direction_keeps_bound():
    rng = np.random.default_rng(8)
    G = rng.standard_normal((7, 3))
    G[2] = np.cross(G[0], G[1])
    om, cond = exact_models(G, rng.standard_normal((8, 3)))
    est = Estimand(np.eye(7)[2], TreatmentContrast(rng.standard_normal(8), np.zeros(8)))
    spec = make_spec([(0, random_contrasts(rng, 8, 1)), (1, random_contrasts(rng, 8, 1))])
    art = build_nc_artifacts(spec, om, cond, est)
    np.testing.assert_allclose(art.K_ab, 0, atol=1e-12)
    region = nc_interval_multiple(art, cond, est)
    bound = bias_bound(om, cond, est)
    assert abs(region.lo + bound) <= 1e-10 and abs(region.hi - bound) <= 1e-10


def test_multiple_rejects_too_many_controls():
    rng = np.random.default_rng(9)
    art, om, cond, est = generic_artifacts(rng, J=3)
    with pytest.raises(JTooLarge):
        nc_interval_multiple(art, cond, est)


def test_multiple_rejects_singular_gram():
    rng = np.random.default_rng(10)
    G = rng.standard_normal((7, 3))
    G[1] = 2.0 * G[0]
    om, cond = exact_models(G, rng.standard_normal((8, 3)))
    est = Estimand(np.eye(7)[3], TreatmentContrast(rng.standard_normal(8), np.zeros(8)))
    spec = make_spec([(0, random_contrasts(rng, 8, 1)), (1, random_contrasts(rng, 8, 1))])
    with pytest.raises(SingularKbb):
        nc_interval_multiple(build_nc_artifacts(spec, om, cond, est), cond, est)


# ------------------------------------------------------------------ invariants

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2), st.integers(1, 3))
def test_analytic_inside_no_nc(seed, J, c):
    rng = np.random.default_rng(seed)
    art, om, cond, est = generic_artifacts(rng, J=J, c=c)
    region = nc_interval_multiple(art, cond, est)
    bound = bias_bound(om, cond, est)
    assert -bound - 1e-10 <= region.lo <= region.hi <= bound + 1e-10
    # the unclipped interval always holds the exact bias
    lo, hi = region.meta["raw_interval"]
    truth = single_nc_bias(om.Gamma, cond, est)
    assert lo - 1e-9 <= truth <= hi + 1e-9
    assert region.contains(truth, slack=1e-9)


@pytest.mark.parametrize("sc", [s for s in table1_scenarios()], ids=lambda s: s.name)
def test_true_bias_inside_for_rotated_truth(sc):
    base = default_config()
    for seed in range(10):
        cfg = base.with_(Gamma_true=base.Gamma_true @ random_orthogonal(3, seed))
        art, om, cond, est = population_artifacts(cfg, sc)
        region = nc_interval_multiple(art, cond, est)
        assert region.contains(true_bias(cfg, est), slack=1e-10)


@pytest.mark.parametrize("name", ["(C,C)", "(N,C)", "(ON,C)", "(NN,N)"])
def test_rotation_invariance(name):
    cfg = default_config()
    sc = scenario_by_name(name)
    art, om, cond, est = population_artifacts(cfg, sc)
    ref = nc_interval_multiple(art, cond, est)
    ref_flag = detect_point_identification(art)[0]
    for seed in range(5):
        R1, R2 = random_orthogonal(3, seed), random_orthogonal(3, seed + 100)
        art_r, _, cond_r, est_r = population_artifacts(cfg, sc, R_gamma=R1, R_b=R2)
        got = nc_interval_multiple(art_r, cond_r, est_r)
        assert abs(got.lo - ref.lo) <= 1e-10 and abs(got.hi - ref.hi) <= 1e-10
        assert detect_point_identification(art_r)[0] == ref_flag


# --------------------------------------------------------- point identification

def test_point_id_false_when_orthogonal():
    art, *_ = population_artifacts(default_config(), scenario_by_name("(O,C)"))
    flag, reason = detect_point_identification(art)
    assert not flag and reason


def test_point_id_false_with_too_few_contrasts():
    rng = np.random.default_rng(11)
    G, B = rng.standard_normal((7, 3)), rng.standard_normal((8, 3))
    om, cond = exact_models(G, B)
    est = Estimand(np.eye(7)[0], TreatmentContrast(rng.standard_normal(8), np.zeros(8)))
    art = build_nc_artifacts(make_spec([(0, random_contrasts(rng, 8, 2))]), om, cond, est)
    assert not detect_point_identification(art)[0]
