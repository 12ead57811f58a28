"""Maximum-likelihood factor analysis of correlation matrices and factor-count selection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .confounder import max_admissible_factors
from .errors import (
    ConvergenceWarning,
    FactorCountWarning,
    HeywoodWarning,
    NonConvergence,
    UnsupportedMethod,
)
from .numlin import as_rng

LOWER_UNIQUENESS = 0.005


@dataclass(frozen=True)
class FAOptions:
    lower: float = LOWER_UNIQUENESS
    max_iter: int = 2000
    tol: float = 1e-9
    strict: bool = False
    singlet_tol: float = 0.1


@dataclass
class FactorFit:
    """
    ML factor solution on the standardized scale.

    ``loglik`` is the Gaussian log-likelihood per observation (multiply by
    ``n`` for the sample log-likelihood).
    """

    loadings_std: np.ndarray
    uniquenesses: np.ndarray
    loglik: float
    m: int
    heywood: bool = False
    converged: bool = True
    iterations: int = 0

    def implied_corr(self) -> np.ndarray:
        L = self.loadings_std
        return L @ L.T + np.diag(self.uniquenesses)


def correlation(X) -> np.ndarray:
    """Sample correlation matrix of the columns of ``X`` (n-1 denominators)."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / (X.shape[0] - 1)
    d = np.sqrt(np.diag(S))
    C = S / np.outer(d, d)
    np.fill_diagonal(C, 1.0)
    return (C + C.T) / 2


def _loadings_from_psi(S, psi, m):
    sc = 1 / np.sqrt(psi)
    w, V = np.linalg.eigh(S * np.outer(sc, sc))
    w, V = w[::-1], V[:, ::-1]
    L = V[:, :m] * np.sqrt(np.maximum(w[:m] - 1, 0))
    return np.sqrt(psi)[:, None] * L, w


def _discrepancy(psi, S, m):
    sc = 1 / np.sqrt(psi)
    e = np.linalg.eigvalsh(S * np.outer(sc, sc))[::-1][m:]
    return -(np.sum(np.log(e) - e) - m + S.shape[0])


def _discrepancy_grad(psi, S, m):
    L, _ = _loadings_from_psi(S, psi, m)
    g = L @ L.T + np.diag(psi) - S
    return np.diag(g) / psi**2


def gaussian_loglik(S, Sigma) -> float:
    """Per-observation Gaussian log-likelihood of sample covariance ``S`` under ``Sigma``."""
    p = S.shape[0]
    sign, logdet = np.linalg.slogdet(Sigma)
    return -0.5 * (logdet + np.trace(np.linalg.solve(Sigma, S)) + p * np.log(2 * np.pi))


def ml_factor_analysis(corr, m: int, opts: FAOptions | None = None) -> FactorFit:
    """
    Fit an ``m``-factor model to a correlation matrix by maximum likelihood.

    The loadings are profiled out through the eigendecomposition of
    ``Psi^{-1/2} S Psi^{-1/2}`` and the uniquenesses are optimized with
    L-BFGS-B inside ``[lower, 1]``, following R's ``factanal``. No rotation is
    applied.

    Parameters
    ----------
    corr : array-like, shape (p, p)
        Correlation matrix.
    m : int
        Number of factors, ``1 <= m <= max_admissible_factors(p)``.
    opts : FAOptions, optional

    Returns
    -------
    FactorFit

    Warns
    -----
    HeywoodWarning
        If a uniqueness ends at the lower bound.
    """
    opts = opts or FAOptions()
    S = np.asarray(corr, dtype=float)
    S = (S + S.T) / 2
    p = S.shape[0]
    if S.shape != (p, p):
        raise ValueError("corr must be square")
    if not 1 <= m <= max(max_admissible_factors(p), 1):
        raise ValueError(f"m={m} is not admissible for p={p}")
    try:
        start = (1 - 0.5 * m / p) / np.diag(np.linalg.inv(S))
    except np.linalg.LinAlgError:
        start = np.full(p, 0.5)
    start = np.clip(start, opts.lower, 1.0)
    res = minimize(
        _discrepancy,
        start,
        args=(S, m),
        jac=_discrepancy_grad,
        method="L-BFGS-B",
        bounds=[(opts.lower, 1.0)] * p,
        options={"maxiter": opts.max_iter, "ftol": opts.tol * 1e-3, "gtol": opts.tol},
    )
    psi = res.x
    converged = bool(res.success) or res.nit < opts.max_iter
    if not converged:
        if opts.strict:
            raise NonConvergence(f"factor analysis did not converge in {opts.max_iter} iterations")
        warnings.warn(f"factor analysis stopped after {res.nit} iterations", ConvergenceWarning, stacklevel=2)
    L, _ = _loadings_from_psi(S, psi, m)
    # a factor with at most one material loading is not identified apart from
    # that variable's uniqueness (on pure noise ML returns exactly this); fold it back
    for col in range(m):
        big = np.abs(L[:, col]) > opts.singlet_tol
        if np.sum(big) <= 1:
            psi = psi + L[:, col] ** 2
            L[:, col] = 0.0
    uniq = np.clip(1.0 - np.sum(L**2, axis=1), opts.lower, 1.0)
    # keep the reported decomposition exactly on the unit diagonal
    heywood = bool(np.any(psi <= opts.lower * (1 + 1e-6)))
    if heywood:
        warnings.warn(
            f"Heywood case: {int(np.sum(psi <= opts.lower * (1 + 1e-6)))} uniqueness(es) clamped at {opts.lower}",
            HeywoodWarning,
            stacklevel=2,
        )
    Sigma = L @ L.T + np.diag(psi)
    return FactorFit(
        loadings_std=L,
        uniquenesses=uniq,
        loglik=gaussian_loglik(S, Sigma),
        m=m,
        heywood=heywood,
        converged=converged,
        iterations=int(res.nit),
    )


@dataclass
class FactorCount:
    m: int
    method: str
    max_admissible: int
    clamped: bool = False
    details: dict = field(default_factory=dict)

    def __int__(self):
        return self.m


SUPPORTED_COUNT_METHODS = ("eigen", "parallel", "bic")
KNOWN_COUNT_METHODS = SUPPORTED_COUNT_METHODS + ("vss.comp1", "vss.comp2", "map", "adjbic")


def parallel_reference(n: int, p: int, n_iter: int = 100, seed=None) -> np.ndarray:
    """Mean correlation eigenvalues (descending) of ``n_iter`` Gaussian ``n x p`` datasets."""
    rng = as_rng(seed)
    acc = np.zeros(p)
    for _ in range(n_iter):
        acc += np.linalg.eigvalsh(correlation(rng.standard_normal((n, p))))[::-1]
    return acc / n_iter


def select_num_factors(data_matrix, method: str = "parallel", seed=None, n_iter: int = 100) -> FactorCount:
    """
    Choose the number of factors for the columns of ``data_matrix``.

    ``eigen`` counts correlation eigenvalues above 1; ``parallel`` counts the
    leading eigenvalues that exceed the mean eigenvalues of ``n_iter`` seeded
    random-normal datasets of the same shape; ``bic`` minimizes
    ``-2 loglik + df log n`` over admissible ``m`` (including 0). Results are
    clamped to the largest ``m`` satisfying the identifiability count
    condition.
    """
    method = method.lower()
    if method not in SUPPORTED_COUNT_METHODS:
        raise UnsupportedMethod(
            f"factor-count method {method!r} is not implemented; choose from {SUPPORTED_COUNT_METHODS}")
    X = np.asarray(data_matrix, dtype=float)
    n, p = X.shape
    if n <= p:
        raise ValueError("need more rows than columns")
    C = correlation(X)
    evals = np.linalg.eigvalsh(C)[::-1]
    mmax = max_admissible_factors(p)
    details: dict = {"eigenvalues": evals.tolist()}

    if method == "eigen":
        raw = int(np.sum(evals > 1.0 + 1e-10))
    elif method == "parallel":
        ref = parallel_reference(n, p, n_iter, seed)
        details["reference"] = ref.tolist()
        above = evals > ref
        raw = int(np.argmin(above)) if not above.all() else p
    else:
        bics = [-2 * n * gaussian_loglik(C, np.eye(p)) + p * np.log(n)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", HeywoodWarning)
            for m in range(1, mmax + 1):
                fit = ml_factor_analysis(C, m)
                df = p * m + p - m * (m - 1) / 2
                bics.append(-2 * n * fit.loglik + df * np.log(n))
        details["bic"] = bics
        raw = int(np.argmin(bics))

    clamped = raw > mmax
    m = min(raw, mmax)
    if clamped:
        warnings.warn(f"{method}: {raw} factors clamped to the admissible maximum {mmax}",
                      FactorCountWarning, stacklevel=2)
    if m == 0:
        warnings.warn(f"{method}: no common factor retained", FactorCountWarning, stacklevel=2)
    details["raw"] = raw
    return FactorCount(m=m, method=method, max_admissible=mmax, clamped=clamped, details=details)
