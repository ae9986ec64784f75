"""Treatment-effect estimators for staggered adoption designs.

* :func:`did_regression` - two-way fixed-effects regression on a single
  treatment indicator.
* :func:`two_stage_did` - fixed effects from a first stage, then a regression
  of the adjusted outcome on treatment status; GMM standard errors.
* :func:`aggregated_att` - one indicator per treated cohort x time cell,
  aggregated with fixed treated-share weights (delta-method SE).
* :func:`naive_event_study`, :func:`two_stage_event_study`,
  :func:`aggregated_event_study` - lead/duration versions.
* :func:`stacked_did` - cohort-specific event windows with clean controls.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._design import (
    EventStudySpec,
    cell_dummies,
    estimand_label,
    event_indicators,
    fe_matrix,
    normalize_first_stage,
    parse_estimand,
    rlabel,
    treated_cells,
    two_stage_design,
)
from .errors import EmptyBin, NoTreatedCells, WindowUnavailable
from .gmm import MomentSystem, sandwich_vcov, solve_gmm
from .panel import Panel
from .regression import DesignSpec, Vcov, build_design, cluster_sums, cluster_vcov, fit_matrix, wls_fit

__all__ = [
    "Estimate",
    "EffectGrid",
    "EventStudySpec",
    "did_regression",
    "two_stage_did",
    "naive_event_study",
    "two_stage_event_study",
    "aggregated_att",
    "aggregated_event_study",
    "stacked_did",
]

Z95 = 1.96


@dataclass(frozen=True, eq=False)
class Estimate:
    """Point estimate(s) with covariance for a named estimand."""

    estimand: str
    point: float | np.ndarray
    vcov: Vcov
    labels: list
    n_obs: int
    n_clusters: int
    method: str
    extra: dict = field(default_factory=dict)

    @property
    def se(self):
        se = self.vcov.se
        return float(se[0]) if np.ndim(self.point) == 0 else se

    def conf_int(self, z: float = Z95):
        lo = np.asarray(self.point) - z * np.asarray(self.se)
        hi = np.asarray(self.point) + z * np.asarray(self.se)
        if np.ndim(self.point) == 0:
            return float(lo), float(hi)
        return lo, hi

    def __getitem__(self, label: str) -> float:
        if np.ndim(self.point) == 0:
            if label != self.labels[0]:
                raise KeyError(label)
            return float(self.point)
        return float(self.point[self.labels.index(label)])

    def to_records(self) -> list[dict]:
        pts = np.atleast_1d(np.asarray(self.point, dtype=float))
        ses = np.atleast_1d(np.asarray(self.se, dtype=float))
        return [
            {
                "method": self.method,
                "estimand": self.estimand,
                "term": lab,
                "estimate": float(p),
                "se": float(s),
                "ci_low": float(p - Z95 * s),
                "ci_high": float(p + Z95 * s),
                "n_obs": self.n_obs,
                "n_clusters": self.n_clusters,
            }
            for lab, p, s in zip(self.labels, pts, ses)
        ]

    def __repr__(self) -> str:
        if np.ndim(self.point) == 0:
            return f"Estimate({self.method}, {self.estimand}: {self.point:.4f} (se {self.se:.4f}), N={self.n_obs})"
        return f"Estimate({self.method}, {self.estimand}: {len(self.labels)} terms, N={self.n_obs})"


@dataclass(frozen=True, eq=False)
class EffectGrid:
    """Estimated effect for every treated (cohort, time) cell."""

    cohorts: np.ndarray
    times: np.ndarray
    rel_time: np.ndarray
    beta: np.ndarray
    vcov: np.ndarray
    share: np.ndarray  # P(g, p | D = 1), sums to one

    def lookup(self) -> dict:
        return {(int(c), int(t)): float(b) for c, t, b in zip(self.cohorts, self.times, self.beta)}

    def __len__(self) -> int:
        return int(self.beta.size)


def _clusters(panel: Panel, clusters):
    return panel.cluster if clusters is None else np.asarray(clusters)


def _fe_factors(panel: Panel, fe: str, rows=None):
    cs = panel.fe_codes(fe)
    t = panel.time
    if rows is not None:
        cs, t = cs[rows], t[rows]
    return (("unit" if fe == "unit" else "group", cs), ("time", t))


def did_regression(panel: Panel, fe: str = "unit", clusters=None) -> Estimate:
    """Coefficient on D from ``y ~ FE_unit + FE_time + D`` with clustered SE."""
    spec = DesignSpec(factors=_fe_factors(panel, fe), regressors=(("D", panel.D),))
    fit = wls_fit(spec, panel.y, panel.weight)
    vc = cluster_vcov(fit, _clusters(panel, clusters)).subset(["D"])
    return Estimate(
        estimand="did",
        point=fit["D"],
        vcov=vc,
        labels=["D"],
        n_obs=fit.n_obs,
        n_clusters=vc.n_clusters,
        method="did_regression",
    )


def _first_stage(d):
    """Fit the first stage; returns the fixed-effect part of the coefficients."""
    Z1 = np.hstack([d.F, d.E])
    rows = d.first_rows
    labels = d.F_labels + d.E_labels
    fit = fit_matrix(Z1[rows], labels, d.y[rows], d.weights[rows])
    return fit.coef[: d.F.shape[1]]


def _second_stage(panel: Panel, d, clusters, se: str, method: str, estimand: str) -> Estimate:
    lam = _first_stage(d)
    adjusted = d.y - d.F @ lam
    rows = d.second_rows
    fit2 = fit_matrix(d.X[rows], d.X_labels, adjusted[rows], d.weights[rows])
    cl = _clusters(panel, clusters)
    naive = cluster_vcov(fit2, cl[rows])
    extra = {"adjusted_outcome": adjusted, "naive_vcov": naive}
    if se == "naive":
        vc = naive
    elif se == "gmm":
        system = MomentSystem.from_design(d, cl)
        res = sandwich_vcov(system, solve_gmm(system))
        vc = res.vcov
        extra["gmm"] = res
    else:
        raise ValueError("se must be 'gmm' or 'naive'")
    idx = [d.X_labels.index(l) for l in d.reported]
    vc = vc.subset(d.reported)
    point = fit2.coef[idx]
    return Estimate(
        estimand=estimand,
        point=float(point[0]) if estimand != "event_study" else point,
        vcov=vc,
        labels=list(d.reported),
        n_obs=int(np.count_nonzero((d.weights > 0) & (d.first_rows | d.second_rows))),
        n_clusters=vc.n_clusters,
        method=method,
        extra=extra,
    )


def two_stage_did(
    panel: Panel,
    estimand="overall",
    first_stage: str = "untreated_only",
    fe: str = "unit",
    se: str = "gmm",
    clusters=None,
) -> Estimate:
    """Two-stage difference in differences.

    Step 1 estimates unit and time effects (by default on untreated rows);
    step 2 regresses ``y - unit effect - time effect`` on D. ``estimand`` is
    ``"overall"`` or ``"capped:P"``; the capped version keeps only treated
    observations with ``r <= P`` in the second stage.

    Parameters
    ----------
    first_stage : {"untreated_only", "full_sample_interacted", "saturated"}
        Full-sample variants add D x time or D x cell indicators to a first
        stage estimated on every observation.
    se : {"gmm", "naive"}
        ``"naive"`` ignores first-stage estimation error.
    """
    cap = parse_estimand(estimand)
    d = two_stage_design(panel, "did", normalize_first_stage(first_stage), fe, estimand)
    if not np.any(d.X[d.second_rows] > 0):
        raise NoTreatedCells("no treated observations in the second-stage sample")
    return _second_stage(panel, d, clusters, se, "two_stage_did", estimand_label(cap))


def two_stage_event_study(
    panel: Panel,
    spec: EventStudySpec | None = None,
    first_stage: str = "untreated_only",
    fe: str = "unit",
    se: str = "gmm",
    clusters=None,
) -> Estimate:
    """Two-stage event study: adjusted outcomes on lead and duration indicators.

    Each duration coefficient is the mean adjusted outcome over observations
    at that duration, i.e. averaged over the cohorts that reach it.
    """
    spec = spec or EventStudySpec()
    d = two_stage_design(panel, "event_study", normalize_first_stage(first_stage), fe, None, spec)
    return _second_stage(panel, d, clusters, se, "two_stage_event_study", "event_study")


def naive_event_study(panel: Panel, spec: EventStudySpec | None = None, fe: str = "unit", clusters=None) -> Estimate:
    """``y ~ FE + sum_r beta_r D_r`` with relative times ``< -R`` as baseline."""
    spec = spec or EventStudySpec()
    rows = panel.weight > 0
    if spec.cap_durations:
        rows &= ~(panel.rel_time > spec.max_duration)
    X, rs, reported = event_indicators(panel, spec, rows)
    labels = [rlabel(r) for r in rs]
    factors = _fe_factors(panel, fe, rows)
    Xf, fl, lv = _fe_design(factors)
    full = np.hstack([Xf, X[rows]])
    fit = fit_matrix(full, fl + labels, panel.y[rows], panel.weight[rows], levels=lv)
    rep = [rlabel(r) for r in reported]
    vc = cluster_vcov(fit, _clusters(panel, clusters)[rows]).subset(rep)
    return Estimate(
        estimand="event_study",
        point=np.array([fit[l] for l in rep]),
        vcov=vc,
        labels=rep,
        n_obs=fit.n_obs,
        n_clusters=vc.n_clusters,
        method="naive_event_study",
    )


def _fe_design(factors):
    return build_design(DesignSpec(factors=factors))


def _saturated_fit(panel: Panel, fe: str, extra_cols=None, extra_labels=None):
    cells = treated_cells(panel)
    if not cells:
        raise NoTreatedCells("panel has no treated observations with positive weight")
    zero = panel.treated & (panel.weight <= 0)
    if zero.any():
        present = set(cells)
        empty = {(int(g), int(t)) for g, t in zip(panel.group[zero], panel.time[zero])} - present
        if empty:
            warnings.warn(f"dropping {len(empty)} treated cell(s) with zero weight", stacklevel=3)
    M, mlabels = cell_dummies(panel, cells)
    Xf, fl, lv = _fe_design(_fe_factors(panel, fe))
    cols = [Xf, M]
    labels = fl + mlabels
    if extra_cols is not None and extra_cols.shape[1]:
        cols.append(extra_cols)
        labels = labels + list(extra_labels)
    fit = fit_matrix(np.hstack(cols), labels, panel.y, panel.weight, levels=lv)
    return fit, cells, mlabels


def _cell_weights(panel: Panel, cells, rows=None) -> np.ndarray:
    """Weighted treated-observation counts per cell (restricted to ``rows``)."""
    m = panel.treated & (panel.weight > 0)
    if rows is not None:
        m = m & rows
    idx = {c: j for j, c in enumerate(cells)}
    out = np.zeros(len(cells))
    for g, t, w in zip(panel.group[m], panel.time[m], panel.weight[m]):
        out[idx[(int(g), int(t))]] += w
    return out


def aggregated_att(panel: Panel, estimand="overall", fe: str = "unit", clusters=None):
    """Saturated cell regression aggregated with fixed treated-share weights.

    Returns
    -------
    (Estimate, EffectGrid)
        The SE is ``sqrt(w' V w)`` with V the clustered covariance of the cell
        coefficients and the weights w held fixed.
    """
    cap = parse_estimand(estimand)
    fit, cells, mlabels = _saturated_fit(panel, fe)
    V = cluster_vcov(fit, _clusters(panel, clusters))
    Vc = V.subset(mlabels).matrix
    beta = np.array([fit[l] for l in mlabels])
    counts = _cell_weights(panel, cells)
    share = counts / counts.sum()
    cohorts = np.array([panel.cohorts[g - 1] for g, _ in cells])
    times = np.array([t for _, t in cells])
    rel = times - cohorts + 1
    grid = EffectGrid(cohorts=cohorts, times=times, rel_time=rel, beta=beta, vcov=Vc, share=share)
    if cap is None:
        w = share
    else:
        w = np.where(rel <= cap, counts, 0.0)
        if w.sum() <= 0:
            raise NoTreatedCells(f"no treated cells with duration <= {cap}")
        w = w / w.sum()
    point = float(w @ beta)
    var = float(w @ Vc @ w)
    vc = Vcov(np.array([[var]]), ["ATT"], n_clusters=V.n_clusters, adjustment=V.adjustment)
    est = Estimate(
        estimand=estimand_label(cap),
        point=point,
        vcov=vc,
        labels=["ATT"],
        n_obs=fit.n_obs,
        n_clusters=V.n_clusters,
        method="aggregated",
        extra={"weights": w, "grid": grid},
    )
    return est, grid


def aggregated_event_study(
    panel: Panel,
    spec: EventStudySpec | None = None,
    fe: str = "unit",
    clusters=None,
    interact_leads: bool = False,
) -> Estimate:
    """Event study aggregated from cohort-specific effects.

    Duration effects come from the saturated cell regression, averaged over
    the cohorts observed at each duration with treated-observation weights.

    ``interact_leads=False`` reports each lead as the weighted mean residual
    of that regression at the lead (a placebo contrast built from the same
    fixed effects). ``interact_leads=True`` instead adds cohort x lead
    indicators to the regression, so the baseline becomes relative times
    before ``-R`` plus the never treated.
    """
    spec = spec or EventStudySpec()
    r = panel.rel_time
    fin = np.isfinite(r)
    pos = panel.weight > 0
    lead_rs = list(range(-spec.leads, 1))
    for rv in lead_rs + list(range(1, spec.max_duration + 1)):
        if not np.any(fin & pos & (r == rv)):
            raise EmptyBin(f"no observations at relative time r={rv}")

    extra_cols, extra_labels, lead_cells = None, [], []
    if interact_leads:
        for g in range(1, panel.n_cohorts + 1):
            for rv in lead_rs:
                m = (panel.group == g) & (r == rv) & pos
                if m.any():
                    lead_cells.append((g, rv, m))
        extra_cols = np.stack([m.astype(float) for _, _, m in lead_cells], axis=1)
        extra_labels = [f"lead[{int(panel.cohorts[g - 1])},{rv}]" for g, rv, _ in lead_cells]
    fit, cells, mlabels = _saturated_fit(panel, fe, extra_cols, extra_labels)
    cl = _clusters(panel, clusters)

    # every reported term is a linear functional of y: term = A_row @ coef + a_row @ resid
    k = fit.coef.size
    counts = _cell_weights(panel, cells)
    cell_rel = np.array([t - panel.cohorts[g - 1] + 1 for g, t in cells])
    col = {l: i for i, l in enumerate(fit.labels)}
    labels, coef_w, resid_w = [], [], []
    for rv in lead_rs:
        a = np.zeros(k)
        b = np.zeros(panel.n_obs)
        if interact_leads:
            ws = np.array([panel.weight[m].sum() for g, rr, m in lead_cells if rr == rv])
            ids = [col[l] for (g, rr, m), l in zip(lead_cells, extra_labels) if rr == rv]
            a[ids] = ws / ws.sum()
        else:
            m = fin & pos & (r == rv)
            b[m] = panel.weight[m] / panel.weight[m].sum()
        labels.append(rlabel(rv))
        coef_w.append(a)
        resid_w.append(b)
    for rv in range(1, spec.max_duration + 1):
        a = np.zeros(k)
        sel = cell_rel == rv
        ids = [col[mlabels[j]] for j in np.nonzero(sel)[0]]
        a[ids] = counts[sel] / counts[sel].sum()
        labels.append(rlabel(rv))
        coef_w.append(a)
        resid_w.append(np.zeros(panel.n_obs))
    Acoef = np.array(coef_w)
    Bres = np.array(resid_w)
    point = Acoef @ fit.coef + Bres @ fit.resid

    # influence: coef part -> A (X'WX)^-1 x_i w_i u_i ; residual part -> (b_i - b'X (X'WX)^-1 x_i w_i) u_i
    keep = fit.weights > 0
    H = (Acoef - Bres @ fit.X) @ fit.xtx_inv  # (m, k)
    u = fit.resid
    infl = (fit.X * (fit.weights * u)[:, None]) @ H.T + Bres.T * u[:, None]
    S = cluster_sums(infl[keep], cl[keep])
    G = S.shape[0]
    N, kk = fit.n_obs, fit.X.shape[1]
    adj = G / (G - 1) * (N - 1) / max(N - kk, 1)
    V = adj * S.T @ S
    vc = Vcov(0.5 * (V + V.T), labels, n_clusters=G, adjustment=adj)
    return Estimate(
        estimand="event_study",
        point=point,
        vcov=vc,
        labels=labels,
        n_obs=fit.n_obs,
        n_clusters=G,
        method="aggregated_event_study",
    )


def stacked_did(
    panel: Panel,
    pre: int = 2,
    post: int = 4,
    controls: str = "never",
    fe: str = "unit",
    clusters=None,
) -> Estimate:
    """Stacked DiD over cohort windows ``[a - pre, a + post - 1]``.

    Each cohort's dataset holds that cohort plus never-treated units
    (``controls="not_yet"`` adds units adopting after the window). Outcomes
    are regressed on D with dataset x unit and dataset x time effects.

    Raises
    ------
    WindowUnavailable
        A cohort is not observed over its full window, or has no controls.
    """
    if pre < 0 or post < 1:
        raise ValueError("need pre >= 0 and post >= 1")
    if controls not in ("never", "not_yet"):
        raise ValueError("controls must be 'never' or 'not_yet'")
    if panel.n_cohorts == 0:
        raise NoTreatedCells("panel has no treated cohorts")
    cl = _clusters(panel, clusters)
    pos = panel.weight > 0
    parts = []
    for k, a in enumerate(panel.cohorts):
        lo, hi = int(a) - pre, int(a) + post - 1
        window = np.arange(lo, hi + 1)
        in_win = (panel.time >= lo) & (panel.time <= hi)
        coh = (panel.group == k + 1) & pos
        seen = np.unique(panel.time[coh & in_win])
        if seen.size != window.size or np.setdiff1d(window, panel.times).size:
            raise WindowUnavailable(
                f"cohort {int(a)} is not observed over its full window {lo}..{hi}", cohort=int(a)
            )
        ctrl = np.isnan(panel.adoption)
        if controls == "not_yet":
            ctrl = ctrl | (panel.adoption > hi)
        ctrl &= pos
        if not np.any(ctrl & in_win):
            raise WindowUnavailable(f"cohort {int(a)} has no control units in window {lo}..{hi}", cohort=int(a))
        rows = np.nonzero(in_win & (coh | ctrl))[0]
        parts.append((k, rows, (panel.group[rows] == k + 1) & (panel.time[rows] >= a)))
    ds = np.concatenate([np.full(rows.size, k) for k, rows, _ in parts])
    idx = np.concatenate([rows for _, rows, _ in parts])
    D = np.concatenate([d for _, _, d in parts]).astype(float)
    cs = panel.fe_codes(fe)[idx]
    n_cs = int(panel.fe_codes(fe).max()) + 1
    n_t = int(panel.time.max() - panel.time.min()) + 1
    ds_cs = ds * n_cs + cs
    ds_t = ds * n_t + (panel.time[idx] - panel.time.min())
    spec = DesignSpec(factors=(("dataset_unit", ds_cs), ("dataset_time", ds_t)), regressors=(("D", D),))
    # dataset x time dummies also need one reference per extra dataset
    X, labels, lv = _stacked_design(spec, ds)
    fit = fit_matrix(X, labels, panel.y[idx], panel.weight[idx], levels=lv)
    vc = cluster_vcov(fit, cl[idx]).subset(["D"])
    return Estimate(
        estimand=f"stacked({pre},{post})",
        point=fit["D"],
        vcov=vc,
        labels=["D"],
        n_obs=fit.n_obs,
        n_clusters=vc.n_clusters,
        method="stacked_did",
        extra={"n_datasets": len(parts), "controls": controls},
    )


def _stacked_design(spec: DesignSpec, ds: np.ndarray):
    X, labels, lv = build_design(spec)
    # build_design dropped only the first dataset_time level; drop the first
    # time of every dataset so dataset x unit dummies stay identified
    (_, ds_t) = spec.factors[1]
    drop = []
    for k in np.unique(ds)[1:]:
        first_level = np.min(ds_t[ds == k])
        drop.append(f"dataset_time[{first_level}]")
    keep = [i for i, l in enumerate(labels) if l not in set(drop)]
    return X[:, keep], [labels[i] for i in keep], lv
