"""Conditional law of the latent confounders given the treatments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite
from .numlin import sym_inv_sqrt


def count_condition(p: int, m: int) -> bool:
    """Identifiability count condition ``(p - m)^2 - p - m >= 0``."""
    return (p - m) ** 2 - p - m >= 0


def max_admissible_factors(p: int) -> int:
    """Largest ``m < p`` satisfying :func:`count_condition` (0 if none)."""
    best = 0
    for m in range(1, p):
        if count_condition(p, m):
            best = m
    return best


@dataclass(frozen=True)
class TreatmentFactorModel:
    """
    Factor model ``T = B U + eps_T`` with ``Cov(eps_T) = sigma2 * I``.

    ``sigma2_t_given_u`` may also be a length-k vector of idiosyncratic
    variances (general diagonal case).
    """

    B: np.ndarray
    sigma2_t_given_u: float | np.ndarray
    treatment_variances: np.ndarray | None = None
    check: bool = True

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "B", B)
        s2 = np.asarray(self.sigma2_t_given_u, dtype=float)
        if np.any(s2 <= 0):
            raise ValueError("sigma2_t_given_u must be positive")
        if s2.ndim == 1 and s2.shape[0] != B.shape[0]:
            raise DimensionMismatch("idiosyncratic variances must have length k")
        if self.treatment_variances is None:
            tv = np.sum(B**2, axis=1) + s2
        else:
            tv = np.asarray(self.treatment_variances, dtype=float)
        object.__setattr__(self, "treatment_variances", np.broadcast_to(tv, (B.shape[0],)).copy())
        if self.check:
            k, m = B.shape
            if k < 3 or m < 1:
                raise ValueError(f"need k >= 3 and m >= 1, got k={k}, m={m}")
            if not count_condition(k, m):
                raise ValueError(f"m={m} violates (k-m)^2 - k - m >= 0 for k={k}")

    @property
    def k(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def idiosyncratic(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sigma2_t_given_u, float), (self.k,)).copy()

    def cov(self) -> np.ndarray:
        """Model-implied treatment covariance ``B B^T + Sigma_{t|u}``."""
        return self.B @ self.B.T + np.diag(self.idiosyncratic)

    def rotated(self, R) -> "TreatmentFactorModel":
        return TreatmentFactorModel(self.B @ R, self.sigma2_t_given_u, self.treatment_variances, self.check)


@dataclass(frozen=True)
class TreatmentContrast:
    t1: np.ndarray
    t2: np.ndarray

    def __post_init__(self):
        t1 = np.asarray(self.t1, dtype=float).ravel()
        t2 = np.asarray(self.t2, dtype=float).ravel()
        if t1.shape != t2.shape:
            raise DimensionMismatch("t1 and t2 must have the same length")
        if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t2))):
            raise ValueError("contrast values must be finite")
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "t2", t2)

    @property
    def delta(self) -> np.ndarray:
        return self.t1 - self.t2

    @classmethod
    def unit(cls, k: int, index: int, scale: float = 1.0) -> "TreatmentContrast":
        """Contrast ``t1 = scale * e_index`` against ``t2 = 0``."""
        t1 = np.zeros(k)
        t1[index] = scale
        return cls(t1, np.zeros(k))


@dataclass(frozen=True)
class ConfounderConditional:
    """
    Moments of ``U | T = t``.

    ``coef`` maps ``t`` to ``E[U | T = t]``; ``cov_u_given_t`` does not depend
    on ``t``.
    """

    coef: np.ndarray
    cov_u_given_t: np.ndarray
    inv_sqrt_cov: np.ndarray

    @property
    def k(self) -> int:
        return self.coef.shape[1]

    @property
    def m(self) -> int:
        return self.coef.shape[0]

    def mean(self, t) -> np.ndarray:
        return self.coef @ np.asarray(t, dtype=float)

    @property
    def scaled_coef(self) -> np.ndarray:
        """``Sigma_{u|t}^{-1/2} coef``, the map from a treatment shift to the scaled confounder shift."""
        return self.inv_sqrt_cov @ self.coef


def conditional_moments(model: TreatmentFactorModel, woodbury: bool | None = None) -> ConfounderConditional:
    """
    Conditional mean map and covariance of the confounders given treatment.

    ``coef = B^T (B B^T + Sigma)^{-1}`` and
    ``cov = I - B^T (B B^T + Sigma)^{-1} B``. When ``k > 2m`` (or
    ``woodbury=True``) the equivalent ``m x m`` form
    ``(I + B^T Sigma^{-1} B)^{-1} B^T Sigma^{-1}`` is used instead of the
    ``k x k`` solve.
    """
    B = model.B
    k, m = B.shape
    psi = model.idiosyncratic
    if woodbury is None:
        woodbury = k > 2 * m
    if woodbury:
        Bs = B / psi[:, None]
        inner = np.eye(m) + B.T @ Bs
        try:
            L = np.linalg.cholesky(inner)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("I + B^T Sigma^{-1} B is singular") from exc
        coef = np.linalg.solve(L.T, np.linalg.solve(L, Bs.T))
        cov = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(m)))
    else:
        St = B @ B.T + np.diag(psi)
        try:
            L = np.linalg.cholesky(St)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("B B^T + Sigma_{t|u} is singular") from exc
        coef = np.linalg.solve(L.T, np.linalg.solve(L, B)).T
        cov = np.eye(m) - coef @ B
    cov = (cov + cov.T) / 2
    return ConfounderConditional(coef, cov, sym_inv_sqrt(cov))


def scaled_mean_shift(cond: ConfounderConditional, contrast: TreatmentContrast) -> np.ndarray:
    """``Sigma_{u|t}^{-1/2} (mu_{u|t1} - mu_{u|t2})``."""
    if contrast.t1.shape[0] != cond.k:
        raise DimensionMismatch(f"contrast has length {contrast.t1.shape[0]}, model has k={cond.k}")
    return cond.scaled_coef @ contrast.delta


def shift_matrix_for_contrasts(
    cond: ConfounderConditional, contrasts: Sequence[TreatmentContrast]
) -> np.ndarray:
    """Stack :func:`scaled_mean_shift` of each contrast as columns (``m x c``)."""
    if len(contrasts) == 0:
        raise ValueError("need at least one contrast")
    return np.column_stack([scaled_mean_shift(cond, c) for c in contrasts])
