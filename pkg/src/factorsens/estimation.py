"""Estimate the treatment and outcome factor models from observed data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .confounder import TreatmentFactorModel, count_condition, max_admissible_factors
from .errors import DataError, DimensionMismatch
from .factor_analysis import (  # noqa: F401  (re-exported)
    FactorCount,
    FactorFit,
    FAOptions,
    correlation,
    ml_factor_analysis,
    select_num_factors,
)
from .regression import GCheckFit, RegressOptions, fit_regressor


@dataclass(frozen=True)
class Dataset:
    """Treatments ``T`` (n x k) and outcomes ``Y`` (n x q)."""

    T: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.T, dtype=float))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if T.shape[0] != Y.shape[0]:
            raise DimensionMismatch(f"T has {T.shape[0]} rows but Y has {Y.shape[0]}")
        if not (np.all(np.isfinite(T)) and np.all(np.isfinite(Y))):
            raise DataError("data contain missing or non-finite values")
        n = T.shape[0]
        if n <= max(T.shape[1], Y.shape[1]):
            raise DataError(f"need n > max(k, q); got n={n}, k={T.shape[1]}, q={Y.shape[1]}")
        for name, X in (("treatment", T), ("outcome", Y)):
            bad = np.flatnonzero(X.var(axis=0) <= 0)
            if bad.size:
                raise DataError(f"{name} columns {bad.tolist()} have zero variance")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.T.shape[0]

    @property
    def k(self) -> int:
        return self.T.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class OutcomeFactorModel:
    """
    Outcome factor model ``Y = g(T) + Gamma Sigma_{u|t}^{-1/2} U + eps_Y``.

    ``residual_cov`` defaults to ``Gamma Gamma^T + sigma2_y I``.
    """

    Gamma: np.ndarray
    sigma2_y: float
    g_check: object = None
    residual_cov: np.ndarray | None = None
    check: bool = True

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        object.__setattr__(self, "Gamma", G)
        if self.sigma2_y < 0:
            raise ValueError("sigma2_y must be nonnegative")
        if self.residual_cov is None:
            rc = G @ G.T + self.sigma2_y * np.eye(G.shape[0])
        else:
            rc = np.asarray(self.residual_cov, dtype=float)
            if rc.shape != (G.shape[0], G.shape[0]):
                raise DimensionMismatch("residual_cov must be q x q")
        object.__setattr__(self, "residual_cov", (rc + rc.T) / 2)
        if self.check:
            q, m = G.shape
            if q < 3 or not count_condition(q, m):
                raise ValueError(f"m={m} is not admissible for q={q}")

    @property
    def q(self) -> int:
        return self.Gamma.shape[0]

    @property
    def m(self) -> int:
        return self.Gamma.shape[1]

    def rotated(self, R) -> "OutcomeFactorModel":
        return OutcomeFactorModel(self.Gamma @ R, self.sigma2_y, self.g_check, self.residual_cov, self.check)


@dataclass
class FitDiagnostics:
    heywood: bool = False
    converged: bool = True
    singular_design: bool = False
    messages: list = field(default_factory=list)


def _scaled_factor_fit(X, m, fa_opts, label):
    p = X.shape[1]
    if not 1 <= m <= max_admissible_factors(p):
        raise ValueError(f"m={m} violates the count condition for {p} {label} columns")
    fit = ml_factor_analysis(correlation(X), m, fa_opts)
    variances = X.var(axis=0, ddof=1)
    loadings = np.sqrt(variances)[:, None] * fit.loadings_std
    sigma2 = float(np.mean(fit.uniquenesses * variances))
    return loadings, sigma2, variances, fit


def fit_treatment_model(data: Dataset, m: int, fa_opts: FAOptions | None = None,
                        diagnostics: FitDiagnostics | None = None) -> TreatmentFactorModel:
    """
    Estimate ``B`` and the idiosyncratic variance from the treatment correlation.

    The standardized loadings are rescaled by the sample standard deviations,
    and ``sigma2_t_given_u`` is the average of uniqueness times variance.
    """
    B, s2, var, fit = _scaled_factor_fit(data.T, m, fa_opts, "treatment")
    if diagnostics is not None:
        diagnostics.heywood |= fit.heywood
        diagnostics.converged &= fit.converged
    return TreatmentFactorModel(B, s2, var)


def fit_g_check(data: Dataset, regress_opts: RegressOptions | None = None) -> GCheckFit:
    """Regress each outcome on the treatments; residuals are attached to the fit."""
    return fit_regressor(data.T, data.Y, regress_opts)


def fit_outcome_model(data: Dataset, m: int, regress_opts: RegressOptions | None = None,
                      fa_opts: FAOptions | None = None, g_check: GCheckFit | None = None,
                      diagnostics: FitDiagnostics | None = None) -> OutcomeFactorModel:
    """
    Estimate ``Gamma`` from the correlation of ``Y - g_check(T)``.

    A precomputed ``g_check`` may be passed to avoid refitting the regression
    (for example when comparing several ``m``).
    """
    if g_check is None:
        g_check = fit_g_check(data, regress_opts)
    resid = g_check.residuals
    G, s2, var, fit = _scaled_factor_fit(resid, m, fa_opts, "outcome")
    if diagnostics is not None:
        diagnostics.heywood |= fit.heywood
        diagnostics.converged &= fit.converged
        diagnostics.singular_design |= bool(getattr(g_check, "singular", False))
    return OutcomeFactorModel(G, s2, g_check, np.cov(resid, rowvar=False))
