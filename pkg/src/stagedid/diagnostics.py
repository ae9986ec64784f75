"""Implicit weights behind two-way fixed-effects and stacked DiD estimates.

The TWFE coefficient on D equals ``sum_gp w_gp * beta_gp`` over treated
(cohort, time) cells, with

    w_gp  proportional to  [1 - P(D|g) - P(D|t) + P(D)] * P(g, t)

where ``P(D|g)`` is the treated share of cohort g's observations, ``P(D|t)``
the treated share at time t, ``P(D)`` the overall treated share and
``P(g, t)`` the cell's share of all observations. The bracket is the
double-demeaned treatment indicator, so weights can be negative.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateDataset, MissingCell, NoTreatedCells, UnbalancedPanel
from .panel import Panel
from .regression import double_demean, residualize

__all__ = [
    "WeightDecomposition",
    "StackedWeights",
    "did_weights",
    "did_weights_bruteforce",
    "implied_estimand",
    "stacked_weights",
    "stacked_weights_from_panel",
    "write_weights_csv",
    "write_weights_json",
]

WEIGHT_COLUMNS = ("group", "period", "weight", "p_d_given_g", "p_d_given_p", "p_d", "p_gp")


@dataclass(frozen=True, eq=False)
class WeightDecomposition:
    """Per treated cell weights and their probability components.

    ``cohorts`` holds the adoption time of each cell's group and ``times`` its
    calendar time. ``method`` is ``"closed_form"`` or ``"bruteforce"``.
    """

    cohorts: np.ndarray
    times: np.ndarray
    weight: np.ndarray
    p_d_given_g: np.ndarray
    p_d_given_p: np.ndarray
    p_d: float
    p_gp: np.ndarray
    method: str = "closed_form"

    @property
    def rel_time(self) -> np.ndarray:
        return self.times - self.cohorts + 1

    @property
    def numerator(self) -> np.ndarray:
        """Double-demeaned treatment in each cell, ``1 - P(D|g) - P(D|t) + P(D)``."""
        return 1.0 - self.p_d_given_g - self.p_d_given_p + self.p_d

    def negative_summary(self) -> tuple[int, float]:
        neg = self.weight < 0
        return int(neg.sum()), float(self.weight[neg].sum())

    def records(self) -> list[dict]:
        return [
            {
                "group": int(c),
                "period": int(t),
                "weight": float(w),
                "p_d_given_g": float(pg),
                "p_d_given_p": float(pp),
                "p_d": float(self.p_d),
                "p_gp": float(q),
            }
            for c, t, w, pg, pp, q in zip(
                self.cohorts, self.times, self.weight, self.p_d_given_g, self.p_d_given_p, self.p_gp
            )
        ]


def _components(panel: Panel):
    pos = panel.weight > 0
    m = panel.treated & pos
    if not m.any():
        raise NoTreatedCells("panel has no treated observations")
    w = panel.weight
    W = w.sum()
    D = panel.D
    p_d = float((w * D).sum() / W)
    cells = np.unique(np.stack([panel.group[m], panel.time[m]], axis=1), axis=0)
    p_g = np.array([(w * D)[panel.group == g].sum() / w[panel.group == g].sum() for g, _ in cells])
    p_t = np.array([(w * D)[panel.time == t].sum() / w[panel.time == t].sum() for _, t in cells])
    p_gp = np.array([w[(panel.group == g) & (panel.time == t)].sum() / W for g, t in cells])
    cohorts = np.array([panel.cohorts[g - 1] for g, _ in cells], dtype=np.int64)
    times = cells[:, 1].astype(np.int64)
    return cells, cohorts, times, p_g, p_t, p_d, p_gp


def did_weights(panel: Panel) -> WeightDecomposition:
    """Closed-form weights from treated shares.

    Falls back to :func:`did_weights_bruteforce` (``method="bruteforce"``)
    when the panel is unbalanced or row weights are not unit x time separable,
    where the closed form does not apply.
    """
    try:
        double_demean(panel)
    except UnbalancedPanel:
        return did_weights_bruteforce(panel)
    _, cohorts, times, p_g, p_t, p_d, p_gp = _components(panel)
    num = (1.0 - p_g - p_t + p_d) * p_gp
    total = num.sum()
    if total == 0:
        raise NoTreatedCells("treatment is collinear with the fixed effects; weights undefined")
    return WeightDecomposition(cohorts, times, num / total, p_g, p_t, p_d, p_gp, "closed_form")


def did_weights_bruteforce(panel: Panel) -> WeightDecomposition:
    """Weights as FWL slopes of each cell indicator on residualized D.

    D is residualized on unit and time effects by weighted least squares, so
    this path works for any panel and serves as the oracle for the closed form.
    """
    cells, cohorts, times, p_g, p_t, p_d, p_gp = _components(panel)
    w = panel.weight
    Dt = residualize(panel.D, (("unit", panel.unit), ("time", panel.time)), w)
    denom = float(np.sum(w * Dt * Dt))
    if denom <= 1e-14:
        raise NoTreatedCells("treatment is collinear with the fixed effects; weights undefined")
    omega = np.empty(len(cells))
    for j, (g, t) in enumerate(cells):
        ind = ((panel.group == g) & (panel.time == t)).astype(float)
        omega[j] = np.sum(w * ind * Dt) / denom
    return WeightDecomposition(cohorts, times, omega, p_g, p_t, p_d, p_gp, "bruteforce")


def implied_estimand(weights: WeightDecomposition, grid) -> float:
    """``sum w_gp * beta_gp``.

    ``grid`` is an :class:`~stagedid.estimators.EffectGrid` or a mapping
    ``(cohort, time) -> beta``.
    """
    lookup: Mapping = grid.lookup() if hasattr(grid, "lookup") else grid
    total = 0.0
    for c, t, w in zip(weights.cohorts, weights.times, weights.weight):
        key = (int(c), int(t))
        if key not in lookup:
            if w == 0:
                continue
            raise MissingCell(f"effect grid has no entry for cohort {key[0]} at time {key[1]}")
        total += w * lookup[key]
    return float(total)


@dataclass(frozen=True, eq=False)
class StackedWeights:
    """Weights stacked DiD places on each (duration, cohort) effect."""

    cohorts: np.ndarray
    durations: np.ndarray
    weight: np.ndarray  # shape (n_cohorts, post)
    tau: float
    pi: np.ndarray
    rho: np.ndarray

    @property
    def cohort_weight(self) -> np.ndarray:
        return self.weight.sum(axis=1)

    def implied(self, effects) -> float:
        """Weighted sum of per-cohort duration effects, ``effects[c][r-1]``."""
        E = np.asarray([np.asarray(e, dtype=float)[: self.durations.size] for e in effects])
        return float(np.sum(self.weight * E))


def stacked_weights(cohort_sizes: Sequence[float], control_size, pre: int, post: int, cohorts=None) -> StackedWeights:
    """Closed-form stacked DiD weights.

    ``w_rg = (1 - pi_c) pi_c rho_c / (post * sum_c (1 - pi_c) pi_c rho_c)``
    where ``pi_c`` is the treated share of units in dataset c and ``rho_c``
    the dataset's share of the stacked sample. ``tau = post / (post + pre + 1)``
    is reported for reference; it cancels from the weights. ``control_size`` is a common
    pool size or one size per dataset.

    Raises
    ------
    DegenerateDataset
        A dataset has no treated or no control units.
    """
    if post < 1:
        raise ValueError("post must be >= 1")
    n = np.asarray(cohort_sizes, dtype=float)
    n0 = np.broadcast_to(np.asarray(control_size, dtype=float), n.shape)
    pi = n / (n + n0)
    if np.any(pi <= 0) or np.any(pi >= 1):
        raise DegenerateDataset("every dataset needs both treated and control units")
    size = n + n0
    rho = size / size.sum()
    core = (1 - pi) * pi * rho
    w = core / (post * core.sum())
    tau = post / (post + pre + 1)
    return StackedWeights(
        cohorts=np.arange(1, n.size + 1) if cohorts is None else np.asarray(cohorts),
        durations=np.arange(1, post + 1),
        weight=np.repeat(w[:, None], post, axis=1),
        tau=tau,
        pi=pi,
        rho=rho,
    )


def stacked_weights_from_panel(panel: Panel, pre: int, post: int, controls: str = "never") -> StackedWeights:
    """:func:`stacked_weights` with (weighted) unit counts taken from ``panel``."""
    unit_w = np.zeros(panel.n_units)
    np.maximum.at(unit_w, panel.unit, panel.weight)
    unit_adopt = np.full(panel.n_units, np.nan)
    unit_adopt[panel.unit] = panel.adoption
    sizes, ctrl = [], []
    for a in panel.cohorts:
        sizes.append(unit_w[unit_adopt == a].sum())
        c = np.isnan(unit_adopt)
        if controls == "not_yet":
            c |= unit_adopt > a + post - 1
        ctrl.append(unit_w[c].sum())
    return stacked_weights(sizes, ctrl, pre, post, cohorts=panel.cohorts.copy())


def write_weights_csv(decomp: WeightDecomposition, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(WEIGHT_COLUMNS)
        for rec in decomp.records():
            w.writerow([rec["group"], rec["period"]] + [f"{rec[k]:.17g}" for k in WEIGHT_COLUMNS[2:]])


def write_weights_json(decomp: WeightDecomposition, path) -> None:
    n_neg, mass = decomp.negative_summary()
    doc = {
        "method": decomp.method,
        "n_negative": n_neg,
        "negative_mass": mass,
        "cells": decomp.records(),
    }
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")
