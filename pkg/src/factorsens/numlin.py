"""Dense linear algebra and orthogonal-group optimization primitives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NotPositiveDefinite

EPS_PD_REL = 1e-10


def as_rng(seed) -> np.random.Generator:
    """Return a Generator for ``seed`` (int, sequence of ints, Generator or None)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sym_inv_sqrt(S) -> np.ndarray:
    """
    Inverse symmetric square root of a symmetric positive-definite matrix.

    Parameters
    ----------
    S : array-like, shape (m, m)
        Symmetric positive-definite matrix.

    Returns
    -------
    numpy.ndarray
        Symmetric ``P`` with ``P @ S @ P == I``.

    Raises
    ------
    NotPositiveDefinite
        If an eigenvalue is at or below ``1e-10`` times the largest one.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    S = (S + S.T) / 2
    w, V = np.linalg.eigh(S)
    top = w[-1]
    if top <= 0 or w[0] <= EPS_PD_REL * top:
        raise NotPositiveDefinite(
            f"matrix is not positive definite (eigenvalues in [{w[0]:.3g}, {top:.3g}])")
    P = (V / np.sqrt(w)) @ V.T
    return (P + P.T) / 2


def pseudoinverse(M, tol: float | None = None) -> np.ndarray:
    """
    Moore-Penrose pseudoinverse via SVD.

    Singular values below ``tol * s_max`` are treated as zero; the default
    ``tol`` is ``1e-12 * max(M.shape)``. A zero matrix maps to the zero matrix
    of transposed shape.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if tol is None:
        tol = 1e-12 * max(M.shape)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(M.shape[::-1])
    keep = s > tol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def projector_colspace(M, tol: float | None = None) -> np.ndarray:
    """Orthogonal projector ``M M^+`` onto the column space of ``M``."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    P = M @ pseudoinverse(M, tol)
    return (P + P.T) / 2


def random_orthogonal(m: int, seed=None) -> np.ndarray:
    """
    Draw an ``m x m`` orthogonal matrix from the Haar measure on O(m).

    Uses the QR factorization of a standard Gaussian matrix with the signs of
    ``R``'s diagonal pushed into ``Q``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = as_rng(seed)
    Z = rng.standard_normal((m, m))
    Q, R = np.linalg.qr(Z)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def orthogonality_residual(R) -> float:
    """Frobenius norm of ``R^T R - I``."""
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(R.T @ R - np.eye(R.shape[1])))


def _qf(A: np.ndarray) -> np.ndarray:
    # Q factor with positive diagonal of R, a retraction on O(m)
    Q, R = np.linalg.qr(A)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def riemannian_gradient(R: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient ``G`` onto the tangent space of O(m) at ``R``."""
    A = R.T @ G
    return R @ ((A - A.T) / 2)


@dataclass(frozen=True)
class StiefelOptions:
    max_iter: int = 500
    grad_tol: float = 1e-9
    fun_tol: float = 1e-12
    armijo: float = 1e-4
    max_backtracks: int = 60
    #: stop once ``step * |grad|^2 <= rel_stationary * f`` (0 disables); the
    #: objective is then within about that fraction of a local minimum
    rel_stationary: float = 0.0


@dataclass
class StiefelResult:
    minimizer: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    grad_norm: float = float("nan")
    stop_reason: str = ""


def stiefel_minimize(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    start,
    opts: StiefelOptions | None = None,
) -> StiefelResult:
    """
    Minimize a smooth function over the square orthogonal matrices.

    Projected-gradient descent with a QR retraction and Armijo backtracking
    (step halving). Each iteration starts from a Barzilai-Borwein step length.
    The objective never increases, so the returned point is the best visited.

    Parameters
    ----------
    objective : callable
        ``R -> float``.
    gradient : callable
        ``R -> (m, m)`` Euclidean gradient of ``objective``.
    start : array-like, shape (m, m)
        Orthogonal starting point.
    opts : StiefelOptions, optional

    Returns
    -------
    StiefelResult
        ``converged`` is set when the projected-gradient norm falls below
        ``grad_tol`` or the objective below ``fun_tol``; it is false when the
        iteration budget runs out or the line search stalls.
    """
    opts = opts or StiefelOptions()
    X = np.array(start, dtype=float)
    f = float(objective(X))
    xi = riemannian_gradient(X, gradient(X))
    gnorm = float(np.linalg.norm(xi))
    step = 1.0 / max(gnorm, 1.0)
    X_prev = xi_prev = None

    for it in range(opts.max_iter + 1):
        if f <= opts.fun_tol or gnorm <= opts.grad_tol:
            return StiefelResult(X, f, it, True, gnorm, "tolerance")
        if it == opts.max_iter:
            break
        if X_prev is not None:
            s = X - X_prev
            y = xi - xi_prev
            sy = abs(float(np.vdot(s, y)))
            if sy > 0:
                step = float(np.vdot(s, s)) / sy
            if step * gnorm**2 <= opts.rel_stationary * f:
                return StiefelResult(X, f, it, False, gnorm, "stationary")
        t = step
        g2 = gnorm**2
        for _ in range(opts.max_backtracks):
            X_new = _qf(X - t * xi)
            f_new = float(objective(X_new))
            if f_new <= f - opts.armijo * t * g2:
                break
            t /= 2
        else:
            return StiefelResult(X, f, it, False, gnorm, "line search stalled")
        X_prev, xi_prev = X, xi
        X, f = X_new, f_new
        xi = riemannian_gradient(X, gradient(X))
        gnorm = float(np.linalg.norm(xi))
    return StiefelResult(X, f, opts.max_iter, False, gnorm, "max iterations")


def minimize_with_restarts(
    objective,
    gradient,
    start,
    restarts: int,
    seed=None,
    opts: StiefelOptions | None = None,
    stop_below: float | None = None,
) -> tuple[StiefelResult, int]:
    """
    Run :func:`stiefel_minimize` from ``start`` and then from Haar-random starts.

    Random starts alternate between the two connected components of O(m)
    (relative to ``start``). Stops early once an objective at or below
    ``stop_below`` is reached. Returns the best result and the number of
    runs performed.
    """
    rng = as_rng(seed)
    start = np.asarray(start, dtype=float)
    m = start.shape[0]
    best = stiefel_minimize(objective, gradient, start, opts)
    runs = 1
    sign0 = np.sign(np.linalg.det(start))
    for i in range(restarts):
        if stop_below is not None and best.objective_value <= stop_below:
            break
        R0 = random_orthogonal(m, rng)
        want = -sign0 if i % 2 == 0 else sign0
        if np.sign(np.linalg.det(R0)) != want:
            R0[:, 0] = -R0[:, 0]
        res = stiefel_minimize(objective, gradient, R0, opts)
        runs += 1
        if res.objective_value < best.objective_value:
            best = res
    return best, runs
