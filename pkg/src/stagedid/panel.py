"""Long-format panel data model.

A :class:`Panel` holds one row per (unit, time) observation together with the
derived staggered-adoption structure every estimator relies on: the adoption
cohort of each unit (group 0 is never treated), the absorbing treatment
indicator and the relative time ``r = time - adoption + 1``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable

import numpy as np
import pandas as pd

from .errors import (
    DuplicateKey,
    EmptyCohort,
    NoUntreatedObservations,
    NonAbsorbingTreatment,
    PanelError,
    ParseError,
)

__all__ = [
    "Observation",
    "Requirements",
    "Panel",
    "CellGrid",
    "validate_panel",
    "derive_relative_time",
    "cell_means",
    "read_panel_csv",
    "write_panel_csv",
    "exclude_cohorts",
]


@dataclass(frozen=True)
class Observation:
    """One (unit, time) row. ``adoption=None`` means never treated."""

    unit_id: Hashable
    time: int
    outcome: float
    adoption: int | None = None
    cluster_id: Hashable | None = None
    weight: float = 1.0


@dataclass(frozen=True)
class Requirements:
    """Validation flags.

    Parameters
    ----------
    untreated_each_time : bool
        Every calendar time must contain at least one untreated observation.
    pretreatment_each_cohort : bool
        Every treated cohort must be observed at least once before adoption.
    never_treated : bool
        At least one never-treated unit must be present.
    always_treated : {"drop", "keep"}
        What to do with units already treated at the first sample time. They
        carry no identified treatment effect; "keep" retains them as-is.
    """

    untreated_each_time: bool = False
    pretreatment_each_cohort: bool = False
    never_treated: bool = False
    always_treated: str = "drop"

    @classmethod
    def two_stage(cls, never_treated: bool = True) -> "Requirements":
        return cls(untreated_each_time=True, pretreatment_each_cohort=True, never_treated=never_treated)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """Validated panel. Construct through :func:`validate_panel`.

    Arrays are aligned by observation and sorted by (unit, time). ``unit`` and
    ``cluster`` are integer codes into ``unit_labels`` / ``cluster_labels``.
    """

    unit: np.ndarray
    unit_labels: np.ndarray
    time: np.ndarray
    y: np.ndarray
    adoption: np.ndarray  # float, nan = never treated
    cluster: np.ndarray
    cluster_labels: np.ndarray
    weight: np.ndarray
    times: np.ndarray
    cohorts: np.ndarray
    group: np.ndarray  # 0 = never treated, k = k-th cohort in ``cohorts``
    treated: np.ndarray
    rel_time: np.ndarray  # float, nan for never treated
    dropped_units: tuple = ()
    notes: tuple = field(default=())

    @property
    def n_obs(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_units(self) -> int:
        return int(self.unit_labels.shape[0])

    @property
    def n_clusters(self) -> int:
        return int(np.unique(self.cluster[self.weight > 0]).size)

    @property
    def n_cohorts(self) -> int:
        return int(self.cohorts.size)

    @property
    def D(self) -> np.ndarray:
        return self.treated.astype(float)

    @property
    def is_balanced(self) -> bool:
        return self.n_obs == self.n_units * self.times.size

    def fe_codes(self, fe: str = "unit") -> np.ndarray:
        """Integer codes of the cross-sectional fixed effect: units or cohorts."""
        if fe == "unit":
            return self.unit
        if fe in ("group", "cohort"):
            return self.group
        raise ValueError(f"unknown fixed-effect level {fe!r}; use 'unit' or 'group'")

    def cohort_of_group(self, g: int) -> float:
        return math.nan if g == 0 else float(self.cohorts[g - 1])

    def with_outcome(self, y: np.ndarray) -> "Panel":
        """Copy of the panel with a replaced outcome vector."""
        y = np.asarray(y, dtype=float)
        if y.shape != self.y.shape:
            raise ValueError("outcome vector has the wrong length")
        return _replace(self, y=_readonly(y.copy()))

    def to_frame(self) -> pd.DataFrame:
        """Long-format DataFrame in the CSV schema (plus derived columns)."""
        first_treat = pd.array(
            [pd.NA if np.isnan(a) else int(a) for a in self.adoption], dtype="Int64"
        )
        return pd.DataFrame(
            {
                "unit": self.unit_labels[self.unit],
                "time": self.time,
                "y": self.y,
                "first_treat": first_treat,
                "cluster": self.cluster_labels[self.cluster],
                "weight": self.weight,
                "group": self.group,
                "D": self.treated.astype(int),
                "r": self.rel_time,
            }
        )


def _replace(panel: Panel, **changes) -> Panel:
    return dataclasses.replace(panel, **changes)


def derive_relative_time(adoption, time) -> np.ndarray:
    """Relative time ``r = time - adoption + 1``; nan where never treated.

    ``r = 1`` is the first treated period, ``r <= 0`` are pre-treatment leads.
    Accepts a :class:`Panel` or aligned ``(adoption, time)`` arrays.
    """
    if isinstance(adoption, Panel):
        return np.asarray(adoption.rel_time)
    a = np.asarray(adoption, dtype=float)
    t = np.asarray(time, dtype=float)
    return t - a + 1.0


def _factorize(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        codes, labels = pd.factorize(pd.Series(values, dtype=object), sort=True)
    except TypeError:
        keys = np.array([f"{type(v).__name__}:{v}" for v in values], dtype=object)
        order_codes, uniq = pd.factorize(keys, sort=True)
        first = {c: i for i, c in reversed(list(enumerate(order_codes)))}
        labels = np.array([values[first[c]] for c in range(len(uniq))], dtype=object)
        codes = order_codes
    return np.asarray(codes, dtype=np.int64), np.asarray(labels, dtype=object)


def _coerce_raw(raw) -> dict[str, np.ndarray]:
    if isinstance(raw, pd.DataFrame):
        df = raw
        for col in ("unit", "time", "y"):
            if col not in df.columns:
                raise PanelError(f"missing required column {col!r}")
        n = len(df)
        out = {
            "unit": df["unit"].to_numpy(dtype=object),
            "time": df["time"].to_numpy(),
            "y": df["y"].to_numpy(dtype=float),
        }
        if "first_treat" in df.columns:
            ft = pd.to_numeric(df["first_treat"], errors="coerce").astype(float).to_numpy()
        else:
            ft = np.full(n, np.nan)
        out["adoption"] = ft
        out["cluster"] = (
            df["cluster"].to_numpy(dtype=object) if "cluster" in df.columns else out["unit"]
        )
        out["weight"] = (
            df["weight"].to_numpy(dtype=float) if "weight" in df.columns else np.ones(n)
        )
        return out
    obs = list(raw)
    if obs and not isinstance(obs[0], Observation):
        raise TypeError("raw input must be a DataFrame or a collection of Observation")
    return {
        "unit": np.array([o.unit_id for o in obs], dtype=object),
        "time": np.array([o.time for o in obs]),
        "y": np.array([o.outcome for o in obs], dtype=float),
        "adoption": np.array(
            [np.nan if o.adoption is None else float(o.adoption) for o in obs], dtype=float
        ),
        "cluster": np.array(
            [o.unit_id if o.cluster_id is None else o.cluster_id for o in obs], dtype=object
        ),
        "weight": np.array([o.weight for o in obs], dtype=float),
    }


def validate_panel(raw, requirements: Requirements | None = None) -> Panel:
    """Validate raw observations and derive the staggered-adoption structure.

    Parameters
    ----------
    raw : DataFrame or iterable of Observation
        DataFrame columns follow the CSV schema:
        ``unit, time, y[, first_treat][, cluster][, weight]``.
    requirements : Requirements, optional
        Extra identification checks; see :class:`Requirements`.

    Returns
    -------
    Panel

    Raises
    ------
    PanelError
        The subclass matches the first violation; ``err.problems`` lists all.
    """
    req = requirements or Requirements()
    if req.always_treated not in ("drop", "keep"):
        raise ValueError("always_treated must be 'drop' or 'keep'")
    cols = _coerce_raw(raw)
    n = cols["y"].shape[0]
    if n == 0:
        raise PanelError("panel is empty")

    problems: list[tuple[type, str]] = []

    time_f = np.asarray(cols["time"], dtype=float)
    if np.any(~np.isfinite(time_f)) or np.any(time_f != np.round(time_f)):
        raise PanelError("time must be integer valued")
    time = time_f.astype(np.int64)
    adoption = np.asarray(cols["adoption"], dtype=float)
    if np.any(np.isfinite(adoption) & (adoption != np.round(adoption))):
        raise PanelError("first_treat must be integer valued")
    y = np.asarray(cols["y"], dtype=float)
    if not np.all(np.isfinite(y)):
        problems.append((PanelError, "outcome contains non-finite values"))
    weight = np.asarray(cols["weight"], dtype=float)
    if np.any(~np.isfinite(weight)) or np.any(weight < 0):
        problems.append((PanelError, "weights must be finite and nonnegative"))
    elif not np.any(weight > 0):
        problems.append((PanelError, "at least one observation needs a positive weight"))

    unit_codes, unit_labels = _factorize(cols["unit"])

    # unique (unit, time)
    key = pd.DataFrame({"u": unit_codes, "t": time})
    dup = key.duplicated(keep=False).to_numpy()
    if dup.any():
        pairs = sorted({(unit_labels[u], t) for u, t in zip(unit_codes[dup], time[dup])}, key=str)
        shown = ", ".join(f"({u!r}, {t})" for u, t in pairs[:5])
        problems.append((DuplicateKey, f"duplicate (unit, time) pairs: {shown}"))

    # adoption constant within unit (absorbing treatment)
    adopt_key = np.where(np.isnan(adoption), -np.inf, adoption)
    per_unit = pd.Series(adopt_key).groupby(unit_codes).nunique()
    bad_units = per_unit.index[per_unit.to_numpy() > 1]
    if len(bad_units):
        names = ", ".join(repr(unit_labels[u]) for u in bad_units[:5])
        problems.append(
            (NonAbsorbingTreatment, f"adoption time varies within unit(s) {names}; treatment must be absorbing")
        )

    if problems:
        _raise(problems)

    t_min, t_max = time.min(), time.max()
    notes: list[str] = []
    dropped: tuple = ()
    always = np.isfinite(adoption) & (adoption <= t_min)
    if always.any():
        names = tuple(sorted({unit_labels[u] for u in unit_codes[always]}, key=str))
        if req.always_treated == "drop":
            keep = ~always
            if not keep.any():
                raise PanelError("every unit is treated at the first sample time")
            dropped = names
            notes.append(f"dropped {len(names)} unit(s) already treated at time {t_min}")
            return _build(
                np.asarray(cols["unit"], dtype=object)[keep], time[keep], y[keep], adoption[keep],
                np.asarray(cols["cluster"], dtype=object)[keep], weight[keep], req, dropped, tuple(notes),
            )
        notes.append(f"kept {len(names)} always-treated unit(s); they identify no treatment effect")

    return _build(
        cols["unit"], time, y, adoption, np.asarray(cols["cluster"], dtype=object), weight, req, dropped, tuple(notes)
    )


def _raise(problems: list[tuple[type, str]]) -> None:
    cls, first = problems[0]
    msgs = [m for _, m in problems]
    message = first if len(msgs) == 1 else "; ".join(msgs)
    raise cls(message, problems=msgs)


def _build(unit_raw, time, y, adoption, cluster_raw, weight, req, dropped, notes) -> Panel:
    unit_codes, unit_labels = _factorize(np.asarray(unit_raw, dtype=object))
    order = np.lexsort((time, unit_codes))
    unit_codes = unit_codes[order]
    time = time[order]
    y = y[order]
    adoption = adoption[order]
    weight = weight[order]
    cluster_codes, cluster_labels = _factorize(np.asarray(cluster_raw, dtype=object)[order])

    times = np.unique(time)
    problems: list[tuple[type, str]] = []

    treated_cohort_vals = np.unique(adoption[np.isfinite(adoption)])
    t_max = times.max()
    late = treated_cohort_vals[treated_cohort_vals > t_max]
    if late.size:
        problems.append(
            (EmptyCohort, f"cohort(s) adopting after the last sample time {t_max} have no treated observations: "
             f"{[int(c) for c in late]}; recode them as never treated")
        )
    cohorts = treated_cohort_vals.astype(np.int64)
    group = np.zeros(y.shape[0], dtype=np.int64)
    fin = np.isfinite(adoption)
    group[fin] = np.searchsorted(cohorts, adoption[fin].astype(np.int64)) + 1
    treated = fin & (time >= np.where(fin, adoption, np.inf))
    rel_time = np.where(fin, time - adoption + 1.0, np.nan)

    # contiguity of each cohort's time support
    pos = np.searchsorted(times, time)
    for g in range(cohorts.size + 1):
        m = group == g
        if not m.any():
            continue
        p = np.unique(pos[m])
        if p[-1] - p[0] + 1 != p.size:
            label = "never-treated group" if g == 0 else f"cohort {cohorts[g - 1]}"
            problems.append((PanelError, f"{label} does not span a contiguous set of sample times"))

    if req.never_treated and not np.any(~fin):
        problems.append((NoUntreatedObservations, "no never-treated units"))
    if req.untreated_each_time:
        untreated_times = np.unique(time[~treated & (weight > 0)])
        missing = np.setdiff1d(times, untreated_times)
        if missing.size:
            problems.append(
                (NoUntreatedObservations, f"no untreated observations at time(s) {missing.tolist()}")
            )
    if req.pretreatment_each_cohort:
        for k, c in enumerate(cohorts):
            m = (group == k + 1) & ~treated & (weight > 0)
            if not m.any():
                problems.append((NoUntreatedObservations, f"cohort {c} has no pre-treatment observations"))
    if problems:
        _raise(problems)

    return Panel(
        unit=_readonly(unit_codes),
        unit_labels=_readonly(unit_labels),
        time=_readonly(time),
        y=_readonly(y.astype(float)),
        adoption=_readonly(adoption.astype(float)),
        cluster=_readonly(cluster_codes),
        cluster_labels=_readonly(cluster_labels),
        weight=_readonly(weight.astype(float)),
        times=_readonly(times),
        cohorts=_readonly(cohorts),
        group=_readonly(group),
        treated=_readonly(treated),
        rel_time=_readonly(rel_time),
        dropped_units=tuple(dropped),
        notes=tuple(notes),
    )


def exclude_cohorts(panel: Panel, cohorts: Iterable[int]) -> Panel:
    """Drop every unit belonging to the listed adoption cohorts."""
    drop = np.isin(panel.adoption, np.asarray(list(cohorts), dtype=float))
    if drop.all():
        raise PanelError("excluding these cohorts leaves no observations")
    keep = ~drop
    return _build(
        panel.unit_labels[panel.unit][keep],
        panel.time[keep],
        panel.y[keep],
        panel.adoption[keep],
        panel.cluster_labels[panel.cluster][keep],
        panel.weight[keep],
        Requirements(),
        panel.dropped_units,
        panel.notes,
    )


@dataclass(frozen=True)
class CellGrid:
    """Weighted group x time cell means. Row 0 is the never-treated group."""

    groups: np.ndarray  # cohort adoption time per row, nan for row 0
    times: np.ndarray
    count: np.ndarray
    weight: np.ndarray
    mean: np.ndarray  # nan where a cell has no weight
    treated: np.ndarray

    def double_difference(self, g: int, t: int, g0: int = 0, t0: int | None = None) -> float:
        """Classical 2x2 contrast of cell means (group row ``g`` vs ``g0``)."""
        j = int(np.searchsorted(self.times, t))
        j0 = 0 if t0 is None else int(np.searchsorted(self.times, t0))
        m = self.mean
        return float((m[g, j] - m[g, j0]) - (m[g0, j] - m[g0, j0]))


def cell_means(panel: Panel) -> CellGrid:
    """Weighted mean outcome for every (group, calendar time) cell."""
    G = panel.n_cohorts + 1
    T = panel.times.size
    col = np.searchsorted(panel.times, panel.time)
    count = np.zeros((G, T))
    wsum = np.zeros((G, T))
    ysum = np.zeros((G, T))
    np.add.at(count, (panel.group, col), 1.0)
    np.add.at(wsum, (panel.group, col), panel.weight)
    np.add.at(ysum, (panel.group, col), panel.weight * panel.y)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(wsum > 0, ysum / np.where(wsum > 0, wsum, 1.0), np.nan)
    treated = np.zeros((G, T), dtype=bool)
    treated[panel.group, col] = panel.treated
    groups = np.concatenate([[np.nan], panel.cohorts.astype(float)])
    return CellGrid(groups=groups, times=panel.times.copy(), count=count, weight=wsum, mean=mean, treated=treated)


_CSV_COLUMNS = ("unit", "time", "y", "first_treat", "cluster", "weight")


def read_panel_csv(
    path: str | Path,
    requirements: Requirements | None = None,
    cluster_column: str | None = None,
) -> Panel:
    """Read a panel CSV (UTF-8, comma separated, header required).

    Columns: ``unit,time,y[,first_treat][,cluster][,weight]``. An empty
    ``first_treat`` means never treated. ``cluster_column`` names any other
    column to cluster on.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty", row=1) from None
        header = [h.strip() for h in header]
        for col in ("unit", "time", "y"):
            if col not in header:
                raise ParseError(f"missing required column {col!r}", row=1)
        if cluster_column is not None and cluster_column not in header:
            raise ParseError(f"cluster column {cluster_column!r} not found", row=1)
        idx = {h: i for i, h in enumerate(header)}
        units, times, ys, fts, cls, ws = [], [], [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=rownum)
            units.append(row[idx["unit"]].strip())
            times.append(_parse_int(row[idx["time"]], rownum, "time"))
            ys.append(_parse_real(row[idx["y"]], rownum, "y"))
            if "first_treat" in idx and row[idx["first_treat"]].strip():
                fts.append(float(_parse_int(row[idx["first_treat"]], rownum, "first_treat")))
            else:
                fts.append(np.nan)
            ccol = cluster_column or ("cluster" if "cluster" in idx else None)
            cls.append(row[idx[ccol]].strip() if ccol else units[-1])
            ws.append(_parse_real(row[idx["weight"]], rownum, "weight") if "weight" in idx else 1.0)
    if not units:
        raise ParseError("no data rows", row=2)
    df = pd.DataFrame(
        {"unit": units, "time": times, "y": ys, "first_treat": fts, "cluster": cls, "weight": ws}
    )
    return validate_panel(df, requirements)


def _parse_int(text: str, row: int, column: str) -> int:
    s = text.strip()
    try:
        return int(s)
    except ValueError:
        raise ParseError(f"expected an integer, found {text!r}", row=row, column=column) from None


def _parse_real(text: str, row: int, column: str) -> float:
    s = text.strip()
    if not s or "," in s:
        raise ParseError(f"expected a decimal number, found {text!r}", row=row, column=column)
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"expected a decimal number, found {text!r}", row=row, column=column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", row=row, column=column)
    return v


def write_panel_csv(panel: Panel, path: str | Path) -> None:
    """Write a panel in the CSV ingestion schema at full float precision."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_COLUMNS)
        for i in range(panel.n_obs):
            a = panel.adoption[i]
            w.writerow(
                [
                    panel.unit_labels[panel.unit[i]],
                    int(panel.time[i]),
                    repr(float(panel.y[i])),
                    "" if np.isnan(a) else int(a),
                    panel.cluster_labels[panel.cluster[i]],
                    repr(float(panel.weight[i])),
                ]
            )
