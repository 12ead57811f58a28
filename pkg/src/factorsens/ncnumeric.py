"""Numerical negative-control region: a feasibility sweep over the confounding angle.

For each grid value of ``cos(theta)`` the sweep asks whether some rotation
``R`` of the fitted outcome loadings reproduces both the bias implied by the
angle and the observed negative-control effects, by minimizing the squared
mismatch over the orthogonal group.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .bounds import BiasRegion
from .errors import DimensionMismatch, EmptyRegion
from .negcontrol import NCArtifacts
from .numlin import StiefelOptions, as_rng, random_orthogonal, stiefel_minimize


@dataclass(frozen=True)
class SweepConfig:
    """
    Settings for :func:`sweep_theta`.

    ``delta`` defaults to ``(bound * grid_spacing)^2`` where
    ``grid_spacing = 2 / (grid_size - 1)``. Random restarts are only tried
    at grid points whose warm-started objective exceeds
    ``(restart_rel * bound)^2``, so the optimization path does not depend on
    ``delta``.
    """

    grid_size: int = 401
    delta: float | None = None
    restarts: int = 5
    seed: int = 0
    chunks: int = 1
    threads: int = 1
    restart_rel: float = 1e-4
    reverse_pass: bool = True
    bridge_factor: float = 4.0
    max_iter: int = 500
    grad_tol: float = 1e-9
    rel_stationary: float = 1e-4

    def __post_init__(self):
        if self.grid_size < 3:
            raise ValueError("grid_size must be >= 3")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.chunks < 1 or self.threads < 1:
            raise ValueError("chunks and threads must be >= 1")

    @property
    def spacing(self) -> float:
        return 2.0 / (self.grid_size - 1)

    def resolved_delta(self, bound: float) -> float:
        if self.delta is not None:
            return float(self.delta)
        return float((bound * self.spacing) ** 2)


@dataclass(frozen=True)
class NCProblem:
    """
    Fixed data of the sweep objective.

    ``directions`` has columns ``Gamma~^T a`` then ``Gamma~^T b_j``;
    ``shifts`` holds ``M1`` then each ``M2_j``; ``targets`` holds ``c1``
    (updated per grid point) then each ``c2_j``.
    """

    directions: np.ndarray
    shifts: tuple
    targets: tuple

    @property
    def J(self) -> int:
        return self.directions.shape[1] - 1

    def with_c1(self, c1: float) -> "NCProblem":
        return NCProblem(self.directions, self.shifts, (np.atleast_1d(float(c1)),) + tuple(self.targets[1:]))


def make_problem(Gamma_t, a, b, M1, M2, c1, c2) -> NCProblem:
    """
    Assemble an :class:`NCProblem` from ``Gamma~`` (q x m), ``a``, the
    ``q x J`` indicator matrix ``b``, ``M1``, lists ``M2`` and ``c2``.
    """
    Gamma_t = np.atleast_2d(np.asarray(Gamma_t, float))
    q, m = Gamma_t.shape
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).reshape(q, -1)
    if a.shape[0] != q:
        raise DimensionMismatch("a does not match Gamma")
    M1 = np.asarray(M1, float).ravel()
    if M1.shape[0] != m:
        raise DimensionMismatch("M1 must have length m")
    if len(M2) != b.shape[1] or len(c2) != b.shape[1]:
        raise DimensionMismatch("need one M2 and one c2 per negative control")
    shifts = [M1[:, None]]
    targets = [np.atleast_1d(float(c1))]
    for Mj, cj in zip(M2, c2):
        Mj = np.asarray(Mj, float).reshape(m, -1)
        cj = np.asarray(cj, float).ravel()
        if cj.shape[0] != Mj.shape[1]:
            raise DimensionMismatch("c2_j length must equal the number of contrasts")
        shifts.append(Mj)
        targets.append(cj)
    dirs = Gamma_t.T @ np.column_stack([a, b]) if b.shape[1] else (Gamma_t.T @ a)[:, None]
    return NCProblem(dirs, tuple(shifts), tuple(targets))


def _residuals(R, prob: NCProblem):
    rows = prob.directions.T @ R
    return [rows[t] @ prob.shifts[t] - prob.targets[t] for t in range(len(prob.shifts))]


def nc_residual_parts(R, prob: NCProblem) -> tuple:
    """``(first-term residual, mean negative-control residual)``."""
    res = _residuals(R, prob)
    first = float(res[0] @ res[0])
    nc = [float(r @ r) for r in res[1:]]
    return first, (float(np.mean(nc)) if nc else 0.0)


def nc_objective(R, prob: NCProblem) -> float:
    """Squared mismatch of the estimand bias and of every negative-control effect."""
    return float(sum(float(r @ r) for r in _residuals(R, prob)))


def nc_gradient(R, prob: NCProblem) -> np.ndarray:
    """Euclidean gradient ``sum_t 2 v_t (v_t^T R M_t - c_t) M_t^T``."""
    rows = prob.directions.T @ R
    G = np.zeros_like(R, dtype=float)
    for t, (Mt, ct) in enumerate(zip(prob.shifts, prob.targets)):
        r = rows[t] @ Mt - ct
        G += 2.0 * np.outer(prob.directions[:, t], Mt @ r)
    return G


def _sign_fix_cols(X):
    for j in range(X.shape[1]):
        i = int(np.argmax(np.abs(X[:, j])))
        if X[i, j] < 0:
            X[:, j] = -X[:, j]
    return X


def canonical_loadings(Gamma) -> np.ndarray:
    """Rotation-free representative ``V sqrt(L)`` of ``Gamma Gamma^T`` (top m eigenpairs)."""
    Gamma = np.atleast_2d(np.asarray(Gamma, float))
    m = Gamma.shape[1]
    w, V = np.linalg.eigh(Gamma @ Gamma.T)
    w, V = w[::-1][:m], V[:, ::-1][:, :m]
    return _sign_fix_cols(V * np.sqrt(np.maximum(w, 0.0)))


def canonical_shifts(W) -> np.ndarray:
    """Rotation-free representative (``m`` rows) of the columns of ``W`` via their Gram matrix."""
    W = np.atleast_2d(np.asarray(W, float))
    m, c = W.shape
    w, V = np.linalg.eigh(W.T @ W)
    w, V = w[::-1], V[:, ::-1]
    r = min(m, c)
    rows = (V[:, :r] * np.sqrt(np.maximum(w[:r], 0.0))).T
    rows = _sign_fix_cols(rows.T).T
    out = np.zeros((m, c))
    out[:r] = rows
    return out


def problem_from_artifacts(art: NCArtifacts, canonical: bool = True) -> NCProblem:
    """Build the sweep problem (with ``c1 = 0``) from negative-control artifacts."""
    Gamma = canonical_loadings(art.Gamma) if canonical else art.Gamma
    W = np.column_stack([art.shift] + list(art.M))
    if canonical:
        W = canonical_shifts(W)
    M1 = W[:, 0]
    M2, col = [], 1
    for Mj in art.M:
        M2.append(W[:, col:col + Mj.shape[1]])
        col += Mj.shape[1]
    return make_problem(Gamma, art.a, art.b, M1, M2, 0.0, art.observed_nc_bias)


@dataclass
class GridPoint:
    cos_theta: float
    bias_value: float
    first_residual: float
    nc_residual: float
    objective: float
    feasible: bool = False
    bridged: bool = False
    runs: int = 0


@dataclass
class ThetaRegion:
    """Outcome of a sweep: accepted angles, their biases and the assembled region."""

    feasible_cos: list
    bias_values: list
    region: BiasRegion
    grid: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def grid_rows(self) -> list:
        return [asdict(g) for g in self.grid]


def _solve_point(prob, start, opts, rng, restarts, restart_tol):
    best = stiefel_minimize(lambda R: nc_objective(R, prob), lambda R: nc_gradient(R, prob), start, opts)
    runs = 1
    if best.objective_value <= restart_tol:
        return best, runs
    m = start.shape[0]
    sign0 = np.sign(np.linalg.det(start))
    for i in range(restarts):
        R0 = random_orthogonal(m, rng)
        want = -sign0 if i % 2 == 0 else sign0
        if np.sign(np.linalg.det(R0)) != want:
            R0[:, 0] = -R0[:, 0]
        res = stiefel_minimize(lambda R: nc_objective(R, prob), lambda R: nc_gradient(R, prob), R0, opts)
        runs += 1
        if res.objective_value < best.objective_value:
            best = res
        if best.objective_value <= restart_tol:
            break
    return best, runs


def _sweep_chunk(base, cos_values, bound, cfg, rng_seed, restart_tol):
    m = base.directions.shape[0]
    rng = as_rng(rng_seed)
    opts = StiefelOptions(max_iter=cfg.max_iter, grad_tol=cfg.grad_tol, fun_tol=1e-2 * restart_tol,
                          rel_stationary=cfg.rel_stationary)
    probs = [base.with_c1(bound * c) for c in cos_values]
    R = np.eye(m)
    results = []
    for prob in probs:
        res, runs = _solve_point(prob, R, opts, rng, cfg.restarts, restart_tol)
        results.append([res, runs])
        R = res.minimizer
    if cfg.reverse_pass:
        for i in range(len(probs) - 2, -1, -1):
            if results[i][0].objective_value <= restart_tol:
                continue
            start = results[i + 1][0].minimizer
            res = stiefel_minimize(lambda X: nc_objective(X, probs[i]), lambda X: nc_gradient(X, probs[i]),
                                   start, opts)
            results[i][1] += 1
            if res.objective_value < results[i][0].objective_value:
                results[i][0] = res
    out = []
    for c, prob, (res, runs) in zip(cos_values, probs, results):
        first, nc = nc_residual_parts(res.minimizer, prob)
        out.append(GridPoint(float(c), float(bound * c), first, nc, res.objective_value, runs=runs))
    return out


def _runs(flags):
    runs, start = [], None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        if not f and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))
    return runs


def sweep_theta(art: NCArtifacts, outcome_model=None, cond=None, est=None,
                cfg: SweepConfig | None = None, problem: NCProblem | None = None,
                bound: float | None = None) -> ThetaRegion:
    """
    Sweep ``cos(theta)`` over a uniform grid on ``[-1, 1]`` and keep the
    values for which the mismatch objective can be driven below ``delta``.

    Each grid point is warm-started from the previous minimizer; points that
    stay above the restart threshold get seeded Haar-random restarts, and a
    reverse pass warm-starts them from their right neighbour. Single
    infeasible points between feasible neighbours are bridged when their
    objective is at most ``bridge_factor * delta``.

    Parameters
    ----------
    art : NCArtifacts
        Negative-control artifacts (ignored if ``problem`` is given).
    cfg : SweepConfig, optional
    problem, bound : optional
        Direct problem specification, bypassing the artifacts.

    Returns
    -------
    ThetaRegion

    Raises
    ------
    EmptyRegion
        If no grid point is feasible.
    """
    cfg = cfg or SweepConfig()
    if problem is None:
        problem = problem_from_artifacts(art)
        bound = art.bound
    if bound is None:
        bound = float(np.linalg.norm(problem.directions[:, 0]) * np.linalg.norm(problem.shifts[0]))
    cos_grid = np.linspace(-1.0, 1.0, cfg.grid_size)
    delta = cfg.resolved_delta(bound)
    meta = {"delta": delta, "grid_size": cfg.grid_size, "restarts": cfg.restarts, "seed": cfg.seed,
            "chunks": cfg.chunks, "restart_tol": (cfg.restart_rel * bound) ** 2,
            "restart_policy": "seeded Haar restarts alternating components when the warm start "
                              "stays above restart_tol; reverse warm-start pass",
            "J": problem.J, "bound": bound}

    if bound == 0.0:
        pts = [GridPoint(float(c), 0.0, 0.0, 0.0, 0.0, True) for c in cos_grid]
        region = BiasRegion([(0.0, 0.0)], "numeric_nc", 0.0, "bias", dict(meta))
        return ThetaRegion(cos_grid.tolist(), [0.0] * len(pts), region, pts, meta)
    if problem.J == 0:
        pts = [GridPoint(float(c), float(bound * c), 0.0, 0.0, 0.0, True) for c in cos_grid]
        region = BiasRegion([(-bound, bound)], "numeric_nc", 0.0, "bias", dict(meta))
        return ThetaRegion(cos_grid.tolist(), (bound * cos_grid).tolist(), region, pts, meta)

    restart_tol = (cfg.restart_rel * bound) ** 2
    pieces = np.array_split(np.arange(cfg.grid_size), min(cfg.chunks, cfg.grid_size))
    jobs = [(problem, cos_grid[idx], bound, cfg, [int(cfg.seed), ci], restart_tol)
            for ci, idx in enumerate(pieces)]
    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(lambda j: _sweep_chunk(*j), jobs))
    else:
        parts = [_sweep_chunk(*j) for j in jobs]
    pts = [p for part in parts for p in part]

    for p in pts:
        p.feasible = p.first_residual <= delta and p.nc_residual <= delta
    flags = [p.feasible for p in pts]
    for i in range(1, len(pts) - 1):
        if not flags[i] and flags[i - 1] and flags[i + 1] and pts[i].objective <= cfg.bridge_factor * delta:
            pts[i].bridged = True
    covered = [p.feasible or p.bridged for p in pts]
    runs = _runs(covered)
    if not runs:
        raise EmptyRegion(
            f"no grid point met delta={delta:.3g}; delta may be too small or the negative controls incompatible")
    intervals = [(pts[s].bias_value, pts[e].bias_value) for s, e in runs]
    meta["optimizer_runs"] = int(sum(p.runs for p in pts))
    meta["n_feasible"] = int(sum(flags))
    region = BiasRegion(intervals, "numeric_nc", 0.0, "bias", dict(meta))
    feas = [p for p in pts if p.feasible]
    return ThetaRegion([p.cos_theta for p in feas], [p.bias_value for p in feas], region, pts, meta)


def region_to_pate(region, naive: float) -> BiasRegion:
    """Express a bias region on the PATE scale (``pate = naive - bias``)."""
    reg = region.region if isinstance(region, ThetaRegion) else region
    reg = BiasRegion(reg.intervals, reg.kind, float(naive), "bias", dict(reg.meta))
    return reg.to_pate()
