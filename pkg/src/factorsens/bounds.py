"""Worst-case confounding bias bound, partial identification interval and partial R^2."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .confounder import ConfounderConditional, TreatmentContrast, TreatmentFactorModel, scaled_mean_shift
from .errors import DegenerateDirection, DimensionMismatch

KINDS = ("no_nc", "analytic_nc", "numeric_nc")
QUANTITIES = ("bias", "pate")


@dataclass(frozen=True)
class Estimand:
    """Outcome combination ``a`` and treatment contrast ``(t1, t2)``."""

    a: np.ndarray
    contrast: TreatmentContrast

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        if not np.all(np.isfinite(a)) or not np.any(a != 0):
            raise ValueError("a must be finite and nonzero")
        object.__setattr__(self, "a", a)

    @property
    def delta_t(self) -> np.ndarray:
        return self.contrast.delta


@dataclass
class BiasRegion:
    """
    Union of sorted, disjoint closed intervals.

    ``quantity`` says whether the intervals describe the bias or the PATE;
    the two frames differ by ``center_naive``.
    """

    intervals: list
    kind: str
    center_naive: float = 0.0
    quantity: str = "bias"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.quantity not in QUANTITIES:
            raise ValueError(f"quantity must be one of {QUANTITIES}")
        ivs = sorted((float(lo), float(hi)) for lo, hi in self.intervals)
        if not ivs:
            raise ValueError("a region needs at least one interval")
        for lo, hi in ivs:
            if not lo <= hi:
                raise ValueError(f"interval [{lo}, {hi}] has lo > hi")
        for (_, h1), (l2, _) in zip(ivs, ivs[1:]):
            if l2 <= h1:
                raise ValueError("intervals must be disjoint")
        self.intervals = ivs

    @property
    def lo(self) -> float:
        return self.intervals[0][0]

    @property
    def hi(self) -> float:
        return self.intervals[-1][1]

    @property
    def hull_width(self) -> float:
        return self.hi - self.lo

    @property
    def measure(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return any(lo - slack <= x <= hi + slack for lo, hi in self.intervals)

    def to_pate(self) -> "BiasRegion":
        """PATE frame: ``naive - bias``, so intervals are reflected and shifted."""
        if self.quantity == "pate":
            return self
        return BiasRegion([(self.center_naive - hi, self.center_naive - lo) for lo, hi in self.intervals],
                          self.kind, self.center_naive, "pate", dict(self.meta))

    def to_bias(self) -> "BiasRegion":
        if self.quantity == "bias":
            return self
        return BiasRegion([(self.center_naive - hi, self.center_naive - lo) for lo, hi in self.intervals],
                          self.kind, self.center_naive, "bias", dict(self.meta))

    def intervals_list(self) -> list:
        return [list(iv) for iv in self.intervals]

    def as_dict(self) -> dict:
        return {"kind": self.kind, "quantity": self.quantity, "center_naive": self.center_naive,
                "intervals": self.intervals_list()}


def _check_dims(outcome_model, cond, est):
    if est.a.shape[0] != outcome_model.q:
        raise DimensionMismatch(f"a has length {est.a.shape[0]}, model has q={outcome_model.q}")
    if outcome_model.m != cond.m:
        raise DimensionMismatch(f"outcome model has m={outcome_model.m}, treatment model m={cond.m}")


def loading_direction(outcome_model, a) -> np.ndarray:
    """``Gamma^T a``, the outcome-side confounding direction."""
    return outcome_model.Gamma.T @ np.asarray(a, dtype=float)


def bias_bound(outcome_model, cond: ConfounderConditional, est: Estimand) -> float:
    """
    Worst-case absolute confounding bias over all rotations of the loadings.

    Returns ``||a^T Gamma|| * ||Sigma_{u|t}^{-1/2} mu_{u|dt}||``.
    """
    _check_dims(outcome_model, cond, est)
    shift = scaled_mean_shift(cond, est.contrast)
    return float(np.linalg.norm(loading_direction(outcome_model, est.a)) * np.linalg.norm(shift))


def naive_effect(outcome_model, est: Estimand) -> float:
    """``a^T (g_check(t1) - g_check(t2))``."""
    g = outcome_model.g_check
    if g is None:
        raise ValueError("outcome model has no fitted response surface")
    return float(est.a @ (np.asarray(g(est.contrast.t1)) - np.asarray(g(est.contrast.t2))))


def partial_id_region(naive: float, bound: float) -> BiasRegion:
    """PATE interval ``[naive - bound, naive + bound]``."""
    if bound < 0:
        raise ValueError("bound must be nonnegative")
    return BiasRegion([(naive - bound, naive + bound)], "no_nc", float(naive), "pate")


def no_nc_bias_region(bound: float, naive: float = 0.0) -> BiasRegion:
    return BiasRegion([(-bound, bound)], "no_nc", float(naive), "bias")


def _ratio(num, den, scale, label):
    if not den > 1e-14 * scale:
        raise DegenerateDirection(f"{label} variance along the chosen direction is zero")
    return float(min(max(num / den, 0.0), 1.0))


def partial_r2_outcome(outcome_model, a) -> float:
    """Share of the residual variance of ``a^T Y`` given ``T`` explained by the confounders."""
    a = np.asarray(a, dtype=float)
    ga = loading_direction(outcome_model, a)
    rc = outcome_model.residual_cov
    scale = float(a @ a) * np.trace(rc) / rc.shape[0]
    return _ratio(float(ga @ ga), float(a @ rc @ a), scale, "outcome")


def partial_r2_treatment(treatment_model: TreatmentFactorModel, d) -> float:
    """Share of the variance of ``d^T T`` explained by the confounders."""
    d = np.asarray(d, dtype=float)
    bd = treatment_model.B.T @ d
    cov = treatment_model.cov()
    scale = float(d @ d) * np.trace(cov) / cov.shape[0]
    return _ratio(float(bd @ bd), float(d @ cov @ d), scale, "treatment")
