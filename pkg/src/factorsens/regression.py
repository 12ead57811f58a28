"""Flexible per-outcome regression of outcomes on treatments.

Two deterministic regressors are provided:

``hinge``
    Forward-stagewise selection over hinge functions ``max(0, +-(t_j - knot))``
    at quantile knots, plus pairwise products of already-selected terms,
    followed by backward pruning of those adaptive terms with generalized
    cross-validation. All treatments enter linearly in a base model that is
    never pruned.
``poly2``
    Full degree-2 polynomial basis with a small ridge penalty.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularDesignWarning, UnsupportedMethod

# Term encoding:
#   ("lin", j)
#   ("hinge", j, knot_index, sign)      sign=+1: max(0, t_j - knot), -1: max(0, knot - t_j)
#   ("prod", term_a, term_b)            product of two non-product terms


@dataclass(frozen=True)
class RegressOptions:
    method: str = "hinge"
    n_knots: int = 5
    max_terms: int = 20
    interactions: bool = True
    min_rsq_gain: float = 1e-3
    gcv_penalty: float = 3.0
    ridge: float = 1e-6
    chunk: int = 64

    def __post_init__(self):
        if self.method not in ("hinge", "poly2"):
            raise UnsupportedMethod(f"unknown regressor {self.method!r}; use 'hinge' or 'poly2'")


def _eval_term(term, T, knots):
    kind = term[0]
    if kind == "lin":
        return T[:, term[1]]
    if kind == "hinge":
        _, j, i, s = term
        return np.maximum(0.0, s * (T[:, j] - knots[j, i]))
    return _eval_term(term[1], T, knots) * _eval_term(term[2], T, knots)


def _term_key(term):
    return repr(term)


@dataclass
class OutcomeFit:
    terms: list
    coef: np.ndarray  # intercept first

    def predict(self, T, knots):
        out = np.full(T.shape[0], self.coef[0])
        for c, term in zip(self.coef[1:], self.terms):
            out += c * _eval_term(term, T, knots)
        return out


@dataclass
class GCheckFit:
    """
    Fitted response surface ``t -> g_check(t)`` (one model per outcome).

    ``residuals`` holds the in-sample ``Y - g_check(T)``.
    """

    method: str
    knots: np.ndarray | None
    outcomes: list = field(default_factory=list)
    poly_coef: np.ndarray | None = None
    poly_center: np.ndarray | None = None
    poly_scale: np.ndarray | None = None
    residuals: np.ndarray | None = None
    dropped: list = field(default_factory=list)
    singular: bool = False

    @property
    def q(self) -> int:
        return len(self.outcomes) if self.method == "hinge" else self.poly_coef.shape[1]

    def predict(self, T) -> np.ndarray:
        """Predict ``g_check`` at the rows of ``T`` (a single k-vector gives a q-vector)."""
        T = np.asarray(T, dtype=float)
        single = T.ndim == 1
        T2 = np.atleast_2d(T)
        if self.method == "hinge":
            out = np.column_stack([o.predict(T2, self.knots) for o in self.outcomes])
        else:
            X = (_poly2_basis(T2) - self.poly_center) / self.poly_scale
            out = self.poly_coef[0] + X @ self.poly_coef[1:]
        return out[0] if single else out

    def __call__(self, t):
        return self.predict(t)


def _poly2_basis(T):
    k = T.shape[1]
    cols = [T]
    for i in range(k):
        cols.append(T[:, i:i + 1] * T[:, i:])
    return np.hstack(cols)


def _fit_poly2(T, Y, opts):
    X = _poly2_basis(T)
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - center) / scale
    n = X.shape[0]
    G = Xs.T @ Xs + opts.ridge * n * np.eye(Xs.shape[1])
    beta = np.linalg.solve(G, Xs.T @ (Y - Y.mean(axis=0)))
    coef = np.vstack([Y.mean(axis=0), beta])
    fit = GCheckFit("poly2", None, poly_coef=coef, poly_center=center, poly_scale=scale)
    fit.residuals = Y - fit.predict(T)
    return fit


class _Basis:
    """Orthonormal basis maintained by twice-iterated Gram-Schmidt."""

    def __init__(self, n):
        self.Q = np.ones((n, 1)) / np.sqrt(n)

    def residualize(self, C):
        C = C - self.Q @ (self.Q.T @ C)
        return C - self.Q @ (self.Q.T @ C)

    def add(self, c):
        c = self.residualize(c[:, None])[:, 0]
        self.Q = np.column_stack([self.Q, c / np.linalg.norm(c)])


def _gcv(rss, n, n_cols, penalty):
    eff = n_cols + penalty * (n_cols - 1) / 2
    if eff >= n:
        return np.inf
    return rss / n / (1 - eff / n) ** 2


TIE_REL = 1e-9


def _first_near_max(values, rel=TIE_REL):
    """Index of the first entry within ``rel`` of the maximum.

    Exact ties (for example the two hinge signs at one knot once the linear
    term is in) differ only by rounding, so the first one is taken to keep the
    fit independent of row order.
    """
    top = float(np.max(values))
    return int(np.argmax(values >= top - rel * abs(top)))


def _fit_one_hinge(y, T, knots, base, hinge_terms, hinge_cache, opts):
    n = T.shape[0]
    basis = _Basis(n)
    selected = []
    tss = float(np.sum((y - y.mean()) ** 2))
    seen = set()

    def column(term):
        return hinge_cache[term] if term[0] == "hinge" else _eval_term(term, T, knots)

    for term in base:
        c = column(term)
        basis.add(c)
        selected.append(term)

    r = y - basis.Q @ (basis.Q.T @ y)
    pool = {_term_key(t): t for t in hinge_terms}
    if opts.interactions:
        for i, a in enumerate(base):
            for b in base[i:]:
                p = ("prod", a, b)
                pool[_term_key(p)] = p
    max_cols = min(len(base) + opts.max_terms, max(len(base) + 1, n // 4))

    while tss > 0 and len(selected) < max_cols and pool:
        keys = list(pool)
        best_score, best_key, best_col = 0.0, None, None
        for start in range(0, len(keys), opts.chunk):
            ks = keys[start:start + opts.chunk]
            C = np.column_stack([column(pool[k]) for k in ks])
            raw = np.einsum("ij,ij->j", C, C)
            Cr = basis.residualize(C)
            den = np.einsum("ij,ij->j", Cr, Cr)
            num = (Cr.T @ r) ** 2
            ok = den > 1e-9 * np.maximum(raw, 1e-300)
            score = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
            i = _first_near_max(score)
            if score[i] > best_score * (1 + TIE_REL):
                best_score, best_key, best_col = float(score[i]), ks[i], C[:, i]
        if best_key is None or best_score / tss < opts.min_rsq_gain:
            break
        term = pool.pop(best_key)
        seen.add(best_key)
        basis.add(best_col)
        q = basis.Q[:, -1]
        r = r - q * (q @ r)
        if opts.interactions and term[0] != "prod":
            for other in selected:
                if other[0] != "prod":
                    p = ("prod", other, term)
                    key = _term_key(p)
                    if key not in pool and key not in seen:
                        pool[key] = p
        selected.append(term)

    # backward pruning on the Gram matrix of the selected columns
    X = np.column_stack([np.ones(n)] + [column(t) for t in selected])
    scale = np.sqrt(np.einsum("ij,ij->j", X, X))
    scale[scale == 0] = 1.0
    Xs = X / scale
    G = Xs.T @ Xs
    h = Xs.T @ y
    yy = float(y @ y)

    def rss_of(idx):
        idx = np.asarray(idx)
        try:
            beta = np.linalg.solve(G[np.ix_(idx, idx)], h[idx])
        except np.linalg.LinAlgError:
            beta = np.linalg.lstsq(G[np.ix_(idx, idx)], h[idx], rcond=None)[0]
        return max(yy - float(h[idx] @ beta), 0.0)

    # intercept and linear terms stay; only adaptive terms are pruned
    n_fixed = 1 + len(base)
    current = list(range(X.shape[1]))
    best_set = list(current)
    best_gcv = _gcv(rss_of(current), n, len(current), opts.gcv_penalty)
    while len(current) > n_fixed:
        trials = []
        for pos in current[n_fixed:]:
            sub = [c for c in current if c != pos]
            trials.append((rss_of(sub), pos))
        vals = np.array([-t[0] for t in trials])
        rss, drop = trials[_first_near_max(vals)]
        current = [c for c in current if c != drop]
        g = _gcv(rss, n, len(current), opts.gcv_penalty)
        if g < best_gcv:
            best_gcv, best_set = g, list(current)

    Xk = X[:, best_set]
    coef, *_ = np.linalg.lstsq(Xk, y, rcond=None)
    terms = [selected[c - 1] for c in best_set[1:]]
    return OutcomeFit(terms, coef)


def fit_regressor(T, Y, opts: RegressOptions | None = None) -> GCheckFit:
    """
    Fit ``Y ~ g(T)`` column by column.

    Parameters
    ----------
    T : array-like, shape (n, k)
    Y : array-like, shape (n, q)
    opts : RegressOptions, optional

    Returns
    -------
    GCheckFit
        Deterministic predictor with in-sample residuals attached.
    """
    opts = opts or RegressOptions()
    T = np.asarray(T, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if opts.method == "poly2":
        return _fit_poly2(T, Y, opts)

    n, k = T.shape
    probs = np.arange(1, opts.n_knots + 1) / (opts.n_knots + 1)
    knots = np.quantile(T, probs, axis=0).T  # k x n_knots

    # linear base terms; drop constant or collinear treatment columns
    base, dropped = [], []
    basis = _Basis(n)
    for j in range(k):
        c = T[:, j]
        cr = basis.residualize(c[:, None])[:, 0]
        if np.linalg.norm(cr) <= 1e-8 * max(np.linalg.norm(c), 1e-300):
            dropped.append(j)
            continue
        basis.add(c)
        base.append(("lin", j))
    if dropped:
        warnings.warn(f"treatment columns {dropped} are constant or collinear and were dropped",
                      SingularDesignWarning, stacklevel=2)

    hinge_terms, hinge_cache = [], {}
    for j in range(k):
        if j in dropped:
            continue
        for i in range(opts.n_knots):
            for s in (1, -1):
                term = ("hinge", j, i, s)
                col = np.maximum(0.0, s * (T[:, j] - knots[j, i]))
                if np.any(col > 0):
                    hinge_terms.append(term)
                    hinge_cache[term] = col

    outcomes = [
        _fit_one_hinge(Y[:, o], T, knots, base, hinge_terms, hinge_cache, opts)
        for o in range(Y.shape[1])
    ]
    fit = GCheckFit("hinge", knots, outcomes=outcomes, dropped=dropped, singular=bool(dropped))
    fit.residuals = Y - fit.predict(T)
    return fit
