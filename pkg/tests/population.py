"""Models built directly from simulation truth, bypassing estimation."""

import numpy as np

from factorsens.confounder import TreatmentFactorModel, conditional_moments
from factorsens.estimation import OutcomeFactorModel
from factorsens.negcontrol import build_nc_artifacts
from factorsens.simulation import population_g_check


def population_models(cfg, R_gamma=None, R_b=None):
    """True treatment and outcome models, optionally with rotated loadings."""
    B = cfg.B_true if R_b is None else cfg.B_true @ R_b
    G = cfg.Gamma_true if R_gamma is None else cfg.Gamma_true @ R_gamma
    tm = TreatmentFactorModel(B, cfg.sigma2_t)
    om = OutcomeFactorModel(G, cfg.sigma2_y, g_check=lambda t: population_g_check(cfg, t))
    return tm, om, conditional_moments(tm)


def population_artifacts(cfg, scenario, R_gamma=None, R_b=None):
    """NC artifacts for a benchmark scenario from population quantities.

    Loadings may be rotated, but the observable regression always comes from
    the unrotated truth, as it would from data.
    """
    tm, om, cond = population_models(cfg, R_gamma, R_b)
    est = scenario.estimand()
    return build_nc_artifacts(scenario.nc_spec(), om, cond, est), om, cond, est


def generic_artifacts(rng, q=7, m=3, J=1, c=1, k=8, sigma2=1.0):
    """Exactly compatible artifacts for random loadings and contrasts."""
    from factorsens.bounds import Estimand
    from factorsens.confounder import TreatmentContrast
    from factorsens.negcontrol import make_spec

    B = rng.standard_normal((k, m))
    G = rng.standard_normal((q, m))
    tm = TreatmentFactorModel(B, sigma2)
    cond = conditional_moments(tm)
    L = G @ cond.inv_sqrt_cov
    om = OutcomeFactorModel(G, 1.0, g_check=lambda t: L @ cond.coef @ np.asarray(t, float))
    a = rng.standard_normal(q)
    est = Estimand(a, TreatmentContrast(rng.standard_normal(k), np.zeros(k)))
    pairs = [(j, [(rng.standard_normal(k), np.zeros(k)) for _ in range(c)]) for j in range(J)]
    return build_nc_artifacts(make_spec(pairs), om, cond, est), om, cond, est
