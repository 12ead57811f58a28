"""Synthetic data from the factor-confounding model, ground-truth oracles and the benchmark scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import Estimand
from .confounder import TreatmentContrast, TreatmentFactorModel, conditional_moments
from .errors import DimensionMismatch
from .estimation import Dataset
from .negcontrol import NegativeControlSpec

G_SPECS = ("builtin_eq15", "linear", "zero")

# Rows of Gamma: 1 and 3 colinear, 2 orthogonal to 1, 4 at a generic angle.
_GAMMA_ROWS = np.array([
    [0.2, -0.1, 1.4],
    [1.0, 2.0, 0.0],
    [0.16, -0.08, 1.12],
    [0.8, -0.9, 0.7],
    [1.1, 0.2, -0.6],
    [0.3, 1.2, 0.5],
    [-0.5, 0.7, -0.9],
])

# First five rows of B: 3 = 1.2 * row 1, 2 orthogonal to 1, 4 and 5 generic.
_B_LEAD = np.array([
    [1.0, 0.6, 0.0],
    [-0.6, 1.0, 0.8],
    [1.2, 0.72, 0.0],
    [0.9, -0.3, 0.9],
    [0.3, 1.0, -0.7],
])
_B_FILL_PATTERN = np.array([[1, 1, 0], [1, -1, 1], [0, 1, 1], [1, 0, -1], [-1, 1, 1]], dtype=float)


def _complete_loadings(lead, k, extra=1.15):
    # append k - len(lead) rows so that B^T B is a multiple of the identity
    G = lead.T @ lead
    c = np.linalg.eigvalsh(G).max() * extra
    w, V = np.linalg.eigh(c * np.eye(G.shape[0]) - G)
    root = V @ np.diag(np.sqrt(w)) @ V.T
    Q, _ = np.linalg.qr(_B_FILL_PATTERN[: k - lead.shape[0]])
    return np.vstack([lead, Q @ root])


def default_true_loadings():
    """
    Default loadings ``(B, Gamma)`` for ``k = 10``, ``q = 7``, ``m = 3``.

    ``B^T B`` is proportional to the identity, so the scaled confounder shift
    of a unit treatment contrast ``e_j`` is proportional to row ``j`` of ``B``
    and the angle relations between rows carry over to the shifts.
    """
    return _complete_loadings(_B_LEAD, 10), _GAMMA_ROWS.copy()


def g_eq15(t) -> np.ndarray:
    """
    Nonlinear structural function with 10 inputs and 7 outputs.

    Only outputs 2, 4 and 5 (one-based) are nonzero. Accepts a single
    10-vector or an ``n x 10`` matrix.
    """
    t = np.asarray(t, dtype=float)
    single = t.ndim == 1
    T = np.atleast_2d(t)
    if T.shape[1] != 10:
        raise DimensionMismatch(f"expected 10 treatments, got {T.shape[1]}")
    out = np.zeros((T.shape[0], 7))
    out[:, 1] = 0.3 * T[:, 8] ** 2 - 0.06 * T[:, 9]
    out[:, 3] = 0.1 * T[:, 2] ** 2 + 0.1 * T[:, 3]
    out[:, 4] = 0.5 * T[:, 1] - 0.5 * np.exp(0.35 * np.abs(T[:, 2])) + 0.4 * T[:, 3]
    return out[0] if single else out


@dataclass(frozen=True)
class SimConfig:
    B_true: np.ndarray
    Gamma_true: np.ndarray
    sigma2_t: float = 2.0
    sigma2_y: float = 2.0
    g_spec: str = "builtin_eq15"
    C: np.ndarray | None = None
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B_true, float))
        G = np.atleast_2d(np.asarray(self.Gamma_true, float))
        if B.shape[1] != G.shape[1]:
            raise DimensionMismatch("B_true and Gamma_true need the same number of columns")
        if not (self.sigma2_t > 0 and self.sigma2_y > 0):
            raise ValueError("noise variances must be positive")
        if self.g_spec not in G_SPECS:
            raise ValueError(f"g_spec must be one of {G_SPECS}")
        if self.g_spec == "builtin_eq15" and (B.shape[0], G.shape[0]) != (10, 7):
            raise DimensionMismatch("the builtin structural function needs k=10, q=7")
        C = None
        if self.g_spec == "linear":
            if self.C is None:
                raise ValueError("linear g_spec needs a coefficient matrix C")
            C = np.asarray(self.C, float).reshape(G.shape[0], B.shape[0])
        object.__setattr__(self, "B_true", B)
        object.__setattr__(self, "Gamma_true", G)
        object.__setattr__(self, "C", C)
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def k(self) -> int:
        return self.B_true.shape[0]

    @property
    def q(self) -> int:
        return self.Gamma_true.shape[0]

    @property
    def m(self) -> int:
        return self.B_true.shape[1]

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    def g(self, T) -> np.ndarray:
        T = np.asarray(T, float)
        if self.g_spec == "builtin_eq15":
            return g_eq15(T)
        if self.g_spec == "linear":
            return T @ self.C.T if T.ndim == 2 else self.C @ T
        return np.zeros((T.shape[0], self.q)) if T.ndim == 2 else np.zeros(self.q)

    def treatment_model(self) -> TreatmentFactorModel:
        return TreatmentFactorModel(self.B_true, self.sigma2_t, check=False)


def default_config(n: int = 1000, seed: int = 0, m: int = 3) -> SimConfig:
    """Default design (``k=10``, ``q=7``, noise variances 2); ``m < 3`` keeps the leading columns."""
    B, G = default_true_loadings()
    return SimConfig(B[:, :m], G[:, :m], 2.0, 2.0, "builtin_eq15", None, n, seed)


def _outcome_loading_map(cfg):
    cond = conditional_moments(cfg.treatment_model())
    return cfg.Gamma_true @ cond.inv_sqrt_cov, cond


def generate_dataset(cfg: SimConfig) -> Dataset:
    """
    Draw ``n`` observations: ``U ~ N(0, I)``, ``T = B U + eps_T``,
    ``Y = g(T) + Gamma Sigma_{u|t}^{-1/2} U + eps_Y``.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    U = rng.standard_normal((n, cfg.m))
    T = U @ cfg.B_true.T + np.sqrt(cfg.sigma2_t) * rng.standard_normal((n, cfg.k))
    L, _ = _outcome_loading_map(cfg)
    Y = cfg.g(T) + U @ L.T + np.sqrt(cfg.sigma2_y) * rng.standard_normal((n, cfg.q))
    return Dataset(T, Y)


def population_g_check(cfg: SimConfig, t) -> np.ndarray:
    """Observable regression ``E[Y | T = t] = g(t) + Gamma Sigma_{u|t}^{-1/2} mu_{u|t}``."""
    L, cond = _outcome_loading_map(cfg)
    t = np.asarray(t, float)
    return cfg.g(t) + (L @ cond.coef @ t.T).T if t.ndim == 2 else cfg.g(t) + L @ cond.coef @ t


def _scaled_shift(cfg, est):
    cond = conditional_moments(cfg.treatment_model())
    dt = est.contrast.delta
    if dt.shape[0] != cfg.k or est.a.shape[0] != cfg.q:
        raise DimensionMismatch("estimand does not match the simulation dimensions")
    return cond.scaled_coef @ dt


def true_bias(cfg: SimConfig, est: Estimand) -> float:
    """Confounding bias ``a^T Gamma Sigma_{u|t}^{-1/2} mu_{u|dt}`` under the true parameters."""
    shift = _scaled_shift(cfg, est)
    return float(est.a @ cfg.Gamma_true @ shift)


def true_bound(cfg: SimConfig, est: Estimand) -> float:
    shift = _scaled_shift(cfg, est)
    return float(np.linalg.norm(cfg.Gamma_true.T @ est.a) * np.linalg.norm(shift))


def true_r2_outcome(cfg: SimConfig, a) -> float:
    a = np.asarray(a, float)
    ga = cfg.Gamma_true.T @ a
    return float(ga @ ga / (ga @ ga + cfg.sigma2_y * a @ a))


def true_r2_treatment(cfg: SimConfig, d) -> float:
    d = np.asarray(d, float)
    bd = cfg.B_true.T @ d
    return float(bd @ bd / (bd @ bd + cfg.sigma2_t * d @ d))


def true_pate(cfg: SimConfig, est: Estimand) -> float:
    return float(est.a @ (cfg.g(est.contrast.t1) - cfg.g(est.contrast.t2)))


@dataclass(frozen=True)
class ScenarioSpec:
    """
    A benchmark estimand with its negative controls.

    Indices are zero-based: ``a = e_{a_index}``, ``delta_t = e_{dt_index}``,
    negative-control outcomes ``nc_outcomes`` with contrast ``e_{nc_dt_index}``.
    """

    name: str
    a_index: int
    dt_index: int
    nc_outcomes: tuple = (0,)
    nc_dt_index: int = 0
    k: int = 10
    q: int = 7
    note: str = field(default="", compare=False)

    @property
    def a(self) -> np.ndarray:
        v = np.zeros(self.q)
        v[self.a_index] = 1.0
        return v

    @property
    def delta_t(self) -> np.ndarray:
        v = np.zeros(self.k)
        v[self.dt_index] = 1.0
        return v

    @property
    def nc_delta_t(self) -> np.ndarray:
        v = np.zeros(self.k)
        v[self.nc_dt_index] = 1.0
        return v

    @property
    def J(self) -> int:
        return len(self.nc_outcomes)

    def estimand(self) -> Estimand:
        return Estimand(self.a, TreatmentContrast(self.delta_t, np.zeros(self.k)))

    def nc_spec(self) -> NegativeControlSpec:
        c = TreatmentContrast(self.nc_delta_t, np.zeros(self.k))
        return NegativeControlSpec(tuple((j, (c,)) for j in self.nc_outcomes))


def table1_scenarios() -> list:
    """The nine benchmark scenarios (seven with one negative control, two with two)."""
    rows = [
        ("(O,O)", 1, 1, (0,)),
        ("(O,C)", 1, 2, (0,)),
        ("(C,O)", 2, 1, (0,)),
        ("(C,C)", 2, 2, (0,)),
        ("(C,N)", 2, 3, (0,)),
        ("(N,C)", 3, 2, (0,)),
        ("(N,N)", 3, 4, (0,)),
        ("(ON,C)", 1, 2, (0, 5)),
        ("(NN,N)", 3, 4, (0, 5)),
    ]
    return [ScenarioSpec(name, a, dt, nc, 0) for name, a, dt, nc in rows]


def scenario_by_name(name: str) -> ScenarioSpec:
    for s in table1_scenarios():
        if s.name == name or s.name.strip("()").replace(",", "") == name.replace(",", "").strip("()"):
            return s
    raise KeyError(f"unknown scenario {name!r}")
