"""Weighted least squares with categorical fixed effects.

Fixed effects are expanded into dummy columns. The first factor keeps every
level (unless an intercept is requested); every later factor drops its first
level as the reference. Fits use a thin SVD of the weighted design, so rank
deficiency is detected and reported by column name rather than producing
silently arbitrary coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySample, RankDeficient, TooFewClusters, UnbalancedPanel
from .panel import Panel

__all__ = [
    "DesignSpec",
    "FitResult",
    "Vcov",
    "build_design",
    "wls_fit",
    "fit_matrix",
    "cluster_vcov",
    "classical_vcov",
    "double_demean",
    "residualize",
    "cluster_sums",
]

RANK_TOL = 1e-10


@dataclass(frozen=True)
class DesignSpec:
    """Regressor sets for a linear model.

    Parameters
    ----------
    factors : sequence of (name, codes)
        Categorical variables expanded into dummies.
    regressors : sequence of (name, values)
        Continuous columns, e.g. treatment indicators.
    intercept : bool
        Add a constant; all factors then drop a reference level.
    """

    factors: tuple = ()
    regressors: tuple = ()
    intercept: bool = False

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple((str(n), np.asarray(c)) for n, c in self.factors))
        object.__setattr__(
            self, "regressors", tuple((str(n), np.asarray(v, dtype=float)) for n, v in self.regressors)
        )

    @property
    def n_rows(self) -> int:
        for _, c in self.factors:
            return int(c.shape[0])
        for _, v in self.regressors:
            return int(v.shape[0])
        raise EmptySample("design has no columns")


def build_design(spec: DesignSpec) -> tuple[np.ndarray, list[str], dict[str, np.ndarray]]:
    """Dense design matrix, column labels and the kept levels of each factor."""
    n = spec.n_rows
    cols: list[np.ndarray] = []
    labels: list[str] = []
    levels: dict[str, np.ndarray] = {}
    if spec.intercept:
        cols.append(np.ones((n, 1)))
        labels.append("const")
    for k, (name, codes) in enumerate(spec.factors):
        if codes.shape[0] != n:
            raise ValueError(f"factor {name!r} has {codes.shape[0]} rows, expected {n}")
        uniq, inv = np.unique(codes, return_inverse=True)
        drop_ref = spec.intercept or k > 0
        start = 1 if drop_ref else 0
        dummies = np.zeros((n, uniq.size - start))
        mask = inv >= start
        dummies[np.nonzero(mask)[0], inv[mask] - start] = 1.0
        cols.append(dummies)
        labels.extend(f"{name}[{lv}]" for lv in uniq[start:])
        levels[name] = uniq
    for name, v in spec.regressors:
        if v.shape[0] != n:
            raise ValueError(f"regressor {name!r} has {v.shape[0]} rows, expected {n}")
        cols.append(v.reshape(-1, 1))
        labels.append(name)
    X = np.hstack(cols) if cols else np.zeros((n, 0))
    return X, labels, levels


@dataclass(frozen=True, eq=False)
class FitResult:
    coef: np.ndarray
    resid: np.ndarray
    fitted: np.ndarray
    xtx_inv: np.ndarray
    labels: list
    n_obs: int
    df_resid: int
    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    levels: dict

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def __getitem__(self, label: str) -> float:
        return float(self.coef[self.index(label)])

    def factor_effects(self, name: str) -> dict:
        """Level -> estimated effect, with the reference level (if any) at 0."""
        out = {}
        pos = {lab: i for i, lab in enumerate(self.labels)}
        for lv in self.levels[name]:
            i = pos.get(f"{name}[{lv}]")
            out[lv.item() if hasattr(lv, "item") else lv] = 0.0 if i is None else float(self.coef[i])
        return out


def wls_fit(spec: DesignSpec, y, weights=None, tol: float = RANK_TOL) -> FitResult:
    """Weighted least squares via SVD of ``diag(sqrt(w)) X``.

    Raises
    ------
    RankDeficient
        Singular values below ``tol * max`` exist; the offending columns are
        named in the message and in ``err.columns``.
    EmptySample
        No rows with positive weight, or no columns.
    """
    X, labels, levels = build_design(spec)
    return fit_matrix(X, labels, y, weights, tol=tol, levels=levels)


def fit_matrix(X, labels, y, weights=None, tol: float = RANK_TOL, levels=None) -> FitResult:
    """:func:`wls_fit` on an explicit design matrix."""
    X = np.asarray(X, dtype=float)
    labels = list(labels)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if y.shape[0] != n or w.shape[0] != n:
        raise ValueError("y, weights and design have mismatched lengths")
    n_pos = int(np.count_nonzero(w > 0))
    if n_pos == 0 or X.shape[1] == 0:
        raise EmptySample("no observations with positive weight" if n_pos == 0 else "design has no columns")
    sw = np.sqrt(w)
    A = X * sw[:, None]
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    smax = s[0] if s.size else 0.0
    small = s <= tol * smax if smax > 0 else np.ones_like(s, dtype=bool)
    if small.any() or X.shape[1] > n_pos:
        null = Vt[small] if small.any() else Vt[-1:]
        involved = np.nonzero(np.any(np.abs(null) > 1e-8, axis=0))[0]
        names = [labels[i] for i in involved]
        shown = ", ".join(names[:12]) + (" ..." if len(names) > 12 else "")
        raise RankDeficient(f"design is rank deficient; collinear columns: {shown}", columns=names)
    coef = Vt.T @ ((U.T @ (sw * y)) / s)
    fitted = X @ coef
    resid = y - fitted
    xtx_inv = (Vt.T / s**2) @ Vt
    xtx_inv = 0.5 * (xtx_inv + xtx_inv.T)
    return FitResult(
        coef=coef,
        resid=resid,
        fitted=fitted,
        xtx_inv=xtx_inv,
        labels=labels,
        n_obs=n_pos,
        df_resid=n_pos - X.shape[1],
        X=X,
        y=y,
        weights=w,
        levels=levels or {},
    )


@dataclass(frozen=True, eq=False)
class Vcov:
    """Covariance matrix aligned with ``labels``."""

    matrix: np.ndarray
    labels: list
    n_clusters: int | None = None
    adjustment: float = 1.0

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))

    def subset(self, labels: Sequence[str]) -> "Vcov":
        idx = [self.labels.index(l) for l in labels]
        return Vcov(self.matrix[np.ix_(idx, idx)], list(labels), self.n_clusters, self.adjustment)


def cluster_sums(scores: np.ndarray, clusters: np.ndarray) -> np.ndarray:
    """Sum per-observation score rows within clusters (deterministic order)."""
    codes = np.unique(clusters, return_inverse=True)[1].reshape(-1)
    out = np.zeros((codes.max() + 1 if codes.size else 0,) + scores.shape[1:])
    np.add.at(out, codes, scores)
    return out


def cluster_vcov(fit: FitResult, clusters) -> Vcov:
    """Cluster-robust sandwich with the G/(G-1) * (N-1)/(N-k) adjustment.

    Rows with zero weight are ignored, as are their clusters.
    """
    clusters = np.asarray(clusters)
    keep = fit.weights > 0
    G = int(np.unique(clusters[keep]).size)
    if G < 2:
        raise TooFewClusters(f"need at least 2 clusters, found {G}")
    N = fit.n_obs
    k = fit.X.shape[1]
    scores = fit.X[keep] * (fit.weights[keep] * fit.resid[keep])[:, None]
    S = cluster_sums(scores, clusters[keep])
    meat = S.T @ S
    adj = G / (G - 1) * (N - 1) / max(N - k, 1)
    V = adj * fit.xtx_inv @ meat @ fit.xtx_inv
    V = 0.5 * (V + V.T)
    return Vcov(V, list(fit.labels), n_clusters=G, adjustment=adj)


def classical_vcov(fit: FitResult) -> Vcov:
    """Homoskedastic ``s^2 (X'WX)^{-1}``."""
    s2 = float(np.sum(fit.weights * fit.resid**2) / max(fit.df_resid, 1))
    return Vcov(s2 * fit.xtx_inv, list(fit.labels))


def residualize(x, factors: Sequence[tuple[str, np.ndarray]], weights=None) -> np.ndarray:
    """Residual of ``x`` after weighted projection on the given factors."""
    fit = wls_fit(DesignSpec(factors=tuple(factors)), x, weights)
    return fit.resid


def double_demean(panel: Panel, x=None) -> np.ndarray:
    """Two-way within transform of the treatment indicator (or of ``x``).

    Returns ``x - P(x|unit) - P(x|time) + P(x)`` with weighted means, which
    equals the residual from regressing ``x`` on unit and time effects.

    Raises
    ------
    UnbalancedPanel
        The panel is not balanced, or row weights do not factor into a unit
        part times a time part; use :func:`residualize` instead.
    """
    x = panel.D if x is None else np.asarray(x, dtype=float)
    U, T = panel.n_units, panel.times.size
    if not panel.is_balanced:
        raise UnbalancedPanel("closed-form double demeaning needs a balanced unit x time panel")
    col = np.searchsorted(panel.times, panel.time)
    W = np.zeros((U, T))
    Xm = np.zeros((U, T))
    W[panel.unit, col] = panel.weight
    Xm[panel.unit, col] = x
    total = W.sum()
    wu = W.sum(axis=1)
    wt = W.sum(axis=0)
    if np.any(wu <= 0) or np.any(wt <= 0):
        raise UnbalancedPanel("a unit or time carries zero total weight")
    if not np.allclose(W, np.outer(wu, wt) / total, rtol=1e-12, atol=1e-14 * W.max()):
        raise UnbalancedPanel("row weights do not factor as unit weight x time weight")
    m_unit = (W * Xm).sum(axis=1) / wu
    m_time = (W * Xm).sum(axis=0) / wt
    m_all = (W * Xm).sum() / total
    return x - m_unit[panel.unit] - m_time[col] + m_all
