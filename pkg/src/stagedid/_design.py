"""Design pieces shared by the sequential two-stage estimators and the GMM system."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBin, UnidentifiedFixedEffect
from .panel import Panel

FIRST_STAGES = ("untreated_only", "full_sample_interacted", "saturated")
_FIRST_STAGE_ALIASES = {
    "untreated": "untreated_only",
    "untreated_only": "untreated_only",
    "interacted": "full_sample_interacted",
    "full_sample_interacted": "full_sample_interacted",
    "saturated": "saturated",
}


def normalize_first_stage(name: str) -> str:
    try:
        return _FIRST_STAGE_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown first stage {name!r}; choose from {FIRST_STAGES}") from None


def parse_estimand(estimand) -> int | None:
    """``"overall"`` -> None; ``"capped:4"``, ``("capped", 4)`` or ``4`` -> 4."""
    if estimand is None or estimand == "overall":
        return None
    if isinstance(estimand, (int, np.integer)):
        p = int(estimand)
    elif isinstance(estimand, tuple) and len(estimand) == 2 and estimand[0] == "capped":
        p = int(estimand[1])
    elif isinstance(estimand, str) and estimand.startswith("capped"):
        p = int(estimand.split(":", 1)[1].strip(" ()")) if ":" in estimand else int(estimand[6:].strip("()"))
    else:
        raise ValueError(f"unknown estimand {estimand!r}; use 'overall' or 'capped:P'")
    if p < 1:
        raise ValueError("capped estimand needs P >= 1")
    return p


def estimand_label(cap: int | None) -> str:
    return "overall" if cap is None else f"capped({cap})"


@dataclass(frozen=True)
class EventStudySpec:
    """Lead/duration indicator family.

    ``leads=R`` includes relative times ``-R..0``; ``max_duration`` is the
    last reported duration. With ``cap_durations`` observations beyond it are
    dropped; otherwise they get their own (unreported) indicators.
    """

    leads: int = 1
    max_duration: int = 4
    cap_durations: bool = False

    def __post_init__(self):
        if self.leads < 0:
            raise ValueError("leads must be >= 0")
        if self.max_duration < 1:
            raise ValueError("max_duration must be >= 1")

    @property
    def reported(self) -> list[int]:
        return list(range(-self.leads, 0 + 1)) + list(range(1, self.max_duration + 1))


def rlabel(r: int) -> str:
    return f"r={r}"


def fe_matrix(panel: Panel, fe: str, fit_rows: np.ndarray):
    """Dummies for cross-section and time effects, levels taken from ``fit_rows``.

    Returns ``(F, labels, identified)``; rows whose unit or time never appears
    in ``fit_rows`` have ``identified == False`` and a zero dummy row.
    """
    cs = panel.fe_codes(fe)
    name = "unit" if fe == "unit" else "group"
    cs_levels = np.unique(cs[fit_rows])
    t_levels = np.unique(panel.time[fit_rows])
    n = panel.n_obs
    ci = np.searchsorted(cs_levels, cs)
    ci_ok = (ci < cs_levels.size) & (cs_levels[np.minimum(ci, cs_levels.size - 1)] == cs)
    ti = np.searchsorted(t_levels, panel.time)
    ti_ok = (ti < t_levels.size) & (t_levels[np.minimum(ti, t_levels.size - 1)] == panel.time)
    k_cs = cs_levels.size
    F = np.zeros((n, k_cs + t_levels.size - 1))
    rows = np.nonzero(ci_ok)[0]
    F[rows, ci[rows]] = 1.0
    rows = np.nonzero(ti_ok & (ti > 0))[0]
    F[rows, k_cs + ti[rows] - 1] = 1.0
    if fe == "unit":
        cs_names = [panel.unit_labels[c] for c in cs_levels]
    else:
        cs_names = [panel.cohort_of_group(int(g)) for g in cs_levels]
        cs_names = ["never" if np.isnan(c) else int(c) for c in cs_names]
    labels = [f"{name}[{c}]" for c in cs_names] + [f"time[{t}]" for t in t_levels[1:]]
    return F, labels, ci_ok & ti_ok


def treated_cells(panel: Panel, rows: np.ndarray | None = None):
    """Sorted (group, time) pairs of treated cells with positive weight."""
    m = panel.treated & (panel.weight > 0)
    if rows is not None:
        m &= rows
    cells = np.unique(np.stack([panel.group[m], panel.time[m]], axis=1), axis=0)
    return [tuple(int(v) for v in c) for c in cells]


def cell_dummies(panel: Panel, cells):
    idx = {c: j for j, c in enumerate(cells)}
    M = np.zeros((panel.n_obs, len(cells)))
    for i in np.nonzero(panel.treated)[0]:
        j = idx.get((int(panel.group[i]), int(panel.time[i])))
        if j is not None:
            M[i, j] = 1.0
    labels = [f"cell[{int(panel.cohorts[g - 1])},{t}]" for g, t in cells]
    return M, labels


def first_stage_extra(panel: Panel, first_stage: str):
    """Treatment regressors that enter a full-sample first stage."""
    if first_stage == "untreated_only":
        return np.zeros((panel.n_obs, 0)), []
    if first_stage == "full_sample_interacted":
        ts = np.unique(panel.time[panel.treated & (panel.weight > 0)])
        E = np.stack([(panel.treated & (panel.time == t)).astype(float) for t in ts], axis=1) if ts.size else np.zeros((panel.n_obs, 0))
        return E, [f"D x time[{t}]" for t in ts]
    if first_stage == "saturated":
        return cell_dummies(panel, treated_cells(panel))
    raise ValueError(first_stage)


def event_indicators(panel: Panel, spec: EventStudySpec, rows: np.ndarray):
    """Lead/duration indicator matrix over ``rows``.

    Returns ``(X, rs, reported)`` where ``rs`` lists the relative time of each
    column; durations beyond ``spec.max_duration`` are included only when not
    capped (the caller drops those rows otherwise).
    """
    r = panel.rel_time
    fin = np.isfinite(r)
    rmax = int(np.nanmax(r[fin & rows])) if np.any(fin & rows) else 0
    last = spec.max_duration if spec.cap_durations else max(rmax, spec.max_duration)
    rs = list(range(-spec.leads, 1)) + list(range(1, last + 1))
    X = np.zeros((panel.n_obs, len(rs)))
    for j, rv in enumerate(rs):
        X[:, j] = (fin & rows & (r == rv)).astype(float)
    pos = panel.weight > 0
    for j, rv in enumerate(rs):
        if rv <= spec.max_duration and not np.any(X[pos, j] > 0):
            raise EmptyBin(f"no observations at relative time r={rv}")
    keep = [j for j, rv in enumerate(rs) if np.any(X[pos, j] > 0)]
    return X[:, keep], [rs[j] for j in keep], spec.reported


@dataclass(frozen=True, eq=False)
class TwoStageDesign:
    """Everything the two-stage estimator and its GMM system need."""

    y: np.ndarray
    weights: np.ndarray
    F: np.ndarray
    F_labels: list
    E: np.ndarray
    E_labels: list
    first_rows: np.ndarray
    X: np.ndarray
    X_labels: list
    second_rows: np.ndarray
    reported: list  # labels of the reported second-stage parameters


def two_stage_design(
    panel: Panel,
    variant: str = "did",
    first_stage: str = "untreated_only",
    fe: str = "unit",
    estimand=None,
    es_spec: EventStudySpec | None = None,
) -> TwoStageDesign:
    first_stage = normalize_first_stage(first_stage)
    pos = panel.weight > 0
    if first_stage == "untreated_only":
        first_rows = ~panel.treated & pos
    else:
        first_rows = pos.copy()
    if not first_rows.any():
        raise UnidentifiedFixedEffect("no untreated observations to estimate fixed effects")
    F, F_labels, identified = fe_matrix(panel, fe, first_rows)
    E, E_labels = first_stage_extra(panel, first_stage)

    if variant == "did":
        cap = parse_estimand(estimand)
        second_rows = pos.copy()
        if cap is not None:
            second_rows &= ~panel.treated | (panel.rel_time <= cap)
        X = (panel.treated & second_rows).astype(float)[:, None]
        X_labels = ["D"]
        reported = ["D"]
    elif variant == "event_study":
        spec = es_spec or EventStudySpec()
        second_rows = pos.copy()
        if spec.cap_durations:
            second_rows &= ~(panel.rel_time > spec.max_duration)
        X, rs, rep = event_indicators(panel, spec, second_rows)
        X_labels = [rlabel(v) for v in rs]
        reported = [rlabel(v) for v in rep]
    else:
        raise ValueError(f"unknown variant {variant!r}")

    used = second_rows & np.any(X != 0, axis=1)
    bad = used & ~identified
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise UnidentifiedFixedEffect(
            f"{int(bad.sum())} second-stage observation(s) have a unit or time with no "
            f"first-stage observation, e.g. unit {panel.unit_labels[panel.unit[i]]!r} at time {panel.time[i]}"
        )
    return TwoStageDesign(
        y=np.asarray(panel.y, dtype=float),
        weights=np.asarray(panel.weight, dtype=float),
        F=F,
        F_labels=F_labels,
        E=E,
        E_labels=E_labels,
        first_rows=first_rows,
        X=X,
        X_labels=X_labels,
        second_rows=second_rows,
        reported=reported,
    )
