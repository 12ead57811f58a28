"""Negative-control outcomes: bookkeeping, compatibility and closed-form bias intervals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import BiasRegion, Estimand, loading_direction
from .confounder import ConfounderConditional, TreatmentContrast, scaled_mean_shift, shift_matrix_for_contrasts
from .errors import (
    DegenerateNC,
    DimensionMismatch,
    IncompatibleNC,
    IncompatibleNCWarning,
    JTooLarge,
    SingularKbb,
)
from .numlin import pseudoinverse

COMPAT_TOL = 1e-6
COLINEAR_EPS = 1e-8
KBB_COND_MAX = 1e10


@dataclass(frozen=True)
class NegativeControlSpec:
    """
    Negative-control outcomes and, for each, the treatment contrasts known to
    have no causal effect on it.

    ``entries`` is a sequence of ``(outcome_index, [TreatmentContrast, ...])``
    with zero-based, distinct outcome indices.
    """

    entries: tuple

    def __post_init__(self):
        entries = tuple((int(j), tuple(cs)) for j, cs in self.entries)
        if not entries:
            raise ValueError("need at least one negative-control outcome")
        idx = [j for j, _ in entries]
        if len(set(idx)) != len(idx):
            raise ValueError(f"negative-control outcomes must be distinct, got {idx}")
        for j, cs in entries:
            if len(cs) == 0:
                raise ValueError(f"outcome {j} has no contrasts")
            D = np.column_stack([c.delta for c in cs])
            if np.linalg.matrix_rank(D) < len(cs):
                raise ValueError(f"contrasts for outcome {j} are linearly dependent")
        object.__setattr__(self, "entries", entries)

    @property
    def outcomes(self) -> list:
        return [j for j, _ in self.entries]

    @property
    def J(self) -> int:
        return len(self.entries)

    def b(self, q: int) -> np.ndarray:
        """Indicator vectors ``b_j`` as columns of a ``q x J`` matrix."""
        B = np.zeros((q, self.J))
        for col, j in enumerate(self.outcomes):
            B[j, col] = 1.0
        return B


@dataclass
class NCArtifacts:
    """
    Observed and model-derived quantities for a negative-control analysis.

    Lists are indexed by negative-control position (not outcome index).
    """

    outcomes: list
    G_check: list
    M: list
    observed_nc_bias: list
    K_aa: float
    K_ab: np.ndarray
    K_bb: np.ndarray
    shift: np.ndarray
    a: np.ndarray
    b: np.ndarray
    Gamma: np.ndarray
    M_pinv: list = field(default_factory=list)

    @property
    def J(self) -> int:
        return len(self.outcomes)

    @property
    def m(self) -> int:
        return self.Gamma.shape[1]

    @property
    def bound(self) -> float:
        return float(np.sqrt(max(self.K_aa, 0.0)) * np.linalg.norm(self.shift))

    def nc_bias_coefficients(self, j: int) -> np.ndarray:
        """Row ``D*_j = b_j^T G_j M_j^+``."""
        return self.observed_nc_bias[j] @ self.M_pinv[j]

    def degenerate(self) -> list:
        scale = max(float(np.trace(self.Gamma @ self.Gamma.T)), 0.0)
        return [bool(self.K_bb[j, j] <= 1e-12 * scale) for j in range(self.J)]


def build_nc_artifacts(spec: NegativeControlSpec, outcome_model, cond: ConfounderConditional,
                       est: Estimand) -> NCArtifacts:
    """
    Assemble the observed effect matrices, confounder-shift matrices and
    loading inner products needed by the negative-control intervals.
    """
    q = outcome_model.q
    if est.a.shape[0] != q:
        raise DimensionMismatch(f"a has length {est.a.shape[0]}, model has q={q}")
    if outcome_model.m != cond.m:
        raise DimensionMismatch("outcome and treatment models disagree on m")
    for j in spec.outcomes:
        if not 0 <= j < q:
            raise DimensionMismatch(f"negative-control outcome {j} is out of range for q={q}")
    g = outcome_model.g_check
    G_list, M_list, c2_list, pinv_list = [], [], [], []
    for j, contrasts in spec.entries:
        G = np.column_stack([np.asarray(g(c.t1)) - np.asarray(g(c.t2)) for c in contrasts])
        M = shift_matrix_for_contrasts(cond, contrasts)
        G_list.append(G)
        M_list.append(M)
        c2_list.append(G[j, :].copy())
        pinv_list.append(pseudoinverse(M))
    Gamma = outcome_model.Gamma
    b = spec.b(q)
    ga = loading_direction(outcome_model, est.a)
    gb = Gamma.T @ b
    return NCArtifacts(
        outcomes=spec.outcomes,
        G_check=G_list,
        M=M_list,
        observed_nc_bias=c2_list,
        K_aa=float(ga @ ga),
        K_ab=ga @ gb,
        K_bb=gb.T @ gb,
        shift=scaled_mean_shift(cond, est.contrast),
        a=est.a.copy(),
        b=b,
        Gamma=Gamma.copy(),
        M_pinv=pinv_list,
    )


def compatibility_check(artifacts: NCArtifacts, tol: float = COMPAT_TOL) -> list:
    """
    Per negative control, whether the observed bias row lies in the row
    space of its confounder-shift matrix: ``||c M^+ M - c|| <= tol ||c||``.
    """
    flags = []
    for c2, M, Mp in zip(artifacts.observed_nc_bias, artifacts.M, artifacts.M_pinv):
        nrm = np.linalg.norm(c2)
        if nrm == 0:
            flags.append(True)
            continue
        flags.append(bool(np.linalg.norm(c2 @ Mp @ M - c2) <= tol * nrm))
    return flags


def _require_usable(artifacts, subset, strict, tol):
    degenerate = artifacts.degenerate()
    for j in subset:
        if degenerate[j]:
            raise DegenerateNC(f"negative-control outcome {artifacts.outcomes[j]} carries no confounding signal")
    flags = compatibility_check(artifacts, tol)
    bad = [artifacts.outcomes[j] for j in subset if not flags[j]]
    if bad:
        msg = f"negative-control outcomes {bad} are incompatible with the fitted loadings"
        if strict:
            raise IncompatibleNC(msg)
        warnings.warn(msg + "; using the least-squares projection", IncompatibleNCWarning, stacklevel=3)


def _interval_core(artifacts: NCArtifacts, subset: Sequence[int]):
    s = artifacts.shift
    snorm = float(np.linalg.norm(s))
    Kbb = artifacts.K_bb[np.ix_(subset, subset)]
    Kab = artifacts.K_ab[list(subset)]
    Kstar = np.linalg.solve(Kbb, Kab) if len(subset) > 1 else Kab / Kbb[0, 0]
    center = 0.0
    width = 0.0
    for pos, j in enumerate(subset):
        D = artifacts.nc_bias_coefficients(j)
        resid = s - artifacts.M[j] @ (artifacts.M_pinv[j] @ s)
        center += Kstar[pos] * float(D @ s)
        width += abs(Kstar[pos]) * np.sqrt(max(Kbb[pos, pos] - float(D @ D), 0.0)) * float(np.linalg.norm(resid))
    a_is_b = any(np.array_equal(artifacts.a, artifacts.b[:, j]) for j in subset)
    if not a_is_b:
        # ||a^T Gamma - K* b^T Gamma|| equals sqrt(K_aa - K* K_bb K*^T) but does
        # not lose half the digits when the two directions are colinear
        G = artifacts.Gamma
        rest = G.T @ artifacts.a - G.T @ artifacts.b[:, list(subset)] @ Kstar
        width += float(np.linalg.norm(rest)) * snorm
    return float(center), float(width), Kstar


def _to_region(artifacts, center, width, subset, Kstar):
    bound = artifacts.bound
    raw = (center - width, center + width)
    lo, hi = max(raw[0], -bound), min(raw[1], bound)
    meta = {"raw_interval": list(raw), "nc_outcomes": [artifacts.outcomes[j] for j in subset],
            "K_star": np.asarray(Kstar).tolist(), "clipped": bool(lo > raw[0] or hi < raw[1])}
    if lo > hi:
        warnings.warn("analytic interval lies outside the no-NC bound; reporting it unclipped",
                      IncompatibleNCWarning, stacklevel=3)
        lo, hi = raw
        meta["clipped"] = False
    return BiasRegion([(lo, hi)], "analytic_nc", 0.0, "bias", meta)


def nc_interval_single(artifacts: NCArtifacts, cond=None, est=None, j: int = 0,
                       strict: bool = False, tol: float = COMPAT_TOL) -> BiasRegion:
    """
    Closed-form bias interval using one negative-control outcome.

    ``j`` is the position of the negative control within ``artifacts``. The
    interval is intersected with the no-NC interval; the unclipped interval
    is kept in ``meta['raw_interval']``.
    """
    if not 0 <= j < artifacts.J:
        raise IndexError(f"negative control position {j} out of range")
    _require_usable(artifacts, [j], strict, tol)
    center, width, Kstar = _interval_core(artifacts, [j])
    return _to_region(artifacts, center, width, [j], Kstar)


def nc_interval_multiple(artifacts: NCArtifacts, cond=None, est=None,
                         strict: bool = False, tol: float = COMPAT_TOL) -> BiasRegion:
    """Closed-form bias interval using all ``J < m`` negative-control outcomes."""
    J = artifacts.J
    if J >= artifacts.m:
        raise JTooLarge(f"the closed form needs J < m (J={J}, m={artifacts.m}); use the numeric region")
    subset = list(range(J))
    _require_usable(artifacts, subset, strict, tol)
    if np.linalg.cond(artifacts.K_bb) > KBB_COND_MAX:
        raise SingularKbb("negative-control loading Gram matrix is numerically singular")
    center, width, Kstar = _interval_core(artifacts, subset)
    return _to_region(artifacts, center, width, subset, Kstar)


def detect_point_identification(artifacts: NCArtifacts, cond=None, est=None,
                                tol: float = COLINEAR_EPS) -> tuple:
    """
    Decide whether some negative control pins the bias down to a point.

    Fires for control ``j`` when the confounder shift is fully recovered
    (``rank(M_j) = m``, the estimand shift lies in the column space of
    ``M_j``, or the observed NC bias saturates its loading norm) and the
    outcome directions agree (``a = b_j`` or ``a^T Gamma`` colinear with
    ``b_j^T Gamma`` up to ``tol``).

    Returns
    -------
    (bool, str)
    """
    s = artifacts.shift
    ss = float(s @ s)
    m = artifacts.m
    for j in range(artifacts.J):
        kbb = float(artifacts.K_bb[j, j])
        kab = float(artifacts.K_ab[j])
        if kbb <= 0:
            continue
        M = artifacts.M[j]
        D = artifacts.nc_bias_coefficients(j)
        resid = s - M @ (artifacts.M_pinv[j] @ s)
        shift_reason = None
        if np.linalg.matrix_rank(M) == m:
            shift_reason = f"rank(M_{j}) = m"
        elif float(resid @ resid) <= tol * ss:
            shift_reason = "estimand shift lies in the column space of M"
        elif float(D @ D) >= (1 - tol) * kbb:
            shift_reason = "observed negative-control bias saturates its loading norm"
        if shift_reason is None:
            continue
        dir_reason = None
        if np.array_equal(artifacts.a, artifacts.b[:, j]):
            dir_reason = "a equals b"
        elif kab**2 >= (1 - tol) * artifacts.K_aa * kbb:
            dir_reason = "a^T Gamma is colinear with b^T Gamma"
        if dir_reason is not None:
            return True, f"negative-control outcome {artifacts.outcomes[j]}: {shift_reason}; {dir_reason}"
    return False, "no negative control satisfies both identification conditions"


def make_spec(pairs) -> NegativeControlSpec:
    """
    Build a spec from ``[(outcome_index, [(t1, t2), ...]), ...]`` of plain arrays.
    """
    return NegativeControlSpec(tuple(
        (j, tuple(TreatmentContrast(t1, t2) for t1, t2 in cs)) for j, cs in pairs))
