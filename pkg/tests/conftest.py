"""Shared panel builders and the acceptance-report hook."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from stagedid import validate_panel

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_frame(adoption: dict, times, y=None, weights=None, clusters=None) -> pd.DataFrame:
    """Long frame for units ``adoption`` (unit -> first treated time or None).

    ``y`` is an array shaped (units, times), a callable ``y(unit, t, D)`` or
    None for zeros.
    """
    units = list(adoption)
    times = list(times)
    rows = []
    for i, u in enumerate(units):
        a = adoption[u]
        for j, t in enumerate(times):
            d = a is not None and t >= a
            if y is None:
                v = 0.0
            elif callable(y):
                v = float(y(u, t, d))
            else:
                v = float(np.asarray(y)[i, j])
            row = {"unit": u, "time": t, "y": v, "first_treat": np.nan if a is None else a}
            if weights is not None:
                row["weight"] = float(weights[u] if isinstance(weights, dict) else np.asarray(weights)[i, j])
            if clusters is not None:
                row["cluster"] = clusters[u]
            rows.append(row)
    return pd.DataFrame(rows)


def make_panel(adoption: dict, times, y=None, **kw):
    return validate_panel(make_frame(adoption, times, y, **kw))


def toy_panel(betas=(1.0, 2.0, 3.0), lam=(0.0, 0.5, -1.0), gam=(0.0, 1.0, 3.0)):
    """Three groups over times 0..2; group 1 adopts at 1, group 2 at 2.

    ``betas`` are the effects in cells (1,1), (1,2), (2,2).
    """
    b = {(1, 1): betas[0], (1, 2): betas[1], (2, 2): betas[2]}
    adopt = {"g0": None, "g1": 1, "g2": 2}
    idx = {"g0": 0, "g1": 1, "g2": 2}

    def y(u, t, d):
        g = idx[u]
        return lam[g] + gam[t] + (b[(g, t)] if d else 0.0)

    return make_panel(adopt, range(3), y)


def two_by_two(beta=3.0, noise=None):
    def y(u, t, d):
        base = {"A": 1.0, "B": 2.5}[u] + {1: 0.0, 2: 0.7}[t]
        return base + (beta if d else 0.0) + (0.0 if noise is None else noise[(u, t)])

    return make_panel({"A": None, "B": 2}, [1, 2], y)


def random_design(rng: np.random.Generator, balanced=True, weighted=False, single_cohort=False, noise=1.0):
    """Random staggered design with heterogeneous cell effects.

    Returns ``(panel, beta)`` where ``beta`` maps (cohort, time) to the true
    effect used to generate outcomes.
    """
    T = int(rng.integers(3, 9))
    times = list(range(1, T + 1))
    possible = list(range(2, T + 1))
    n_coh = 1 if single_cohort else int(rng.integers(1, min(4, len(possible)) + 1))
    cohorts = sorted(rng.choice(possible, size=n_coh, replace=False).tolist())
    adopt = {}
    k = 0
    for _ in range(int(rng.integers(1, 5))):
        adopt[f"n{k}"] = None
        k += 1
    for c in cohorts:
        for _ in range(int(rng.integers(1, 4))):
            adopt[f"u{k}"] = c
            k += 1
    beta = {(c, t): float(rng.normal(2.0, 2.0)) for c in cohorts for t in times if t >= c}
    lam = {u: rng.normal() for u in adopt}
    gam = {t: rng.normal() for t in times}

    def y(u, t, d):
        return lam[u] + gam[t] + (beta[(adopt[u], t)] if d else 0.0) + noise * rng.normal()

    weights = {u: float(rng.uniform(0.5, 3.0)) for u in adopt} if weighted else None
    df = make_frame(adopt, times, y, weights=weights)
    if not balanced:
        # trim unit histories at either end; treated units keep their last
        # pre-period and first treated period, the first never-treated unit stays whole
        keep = np.ones(len(df), dtype=bool)
        for j, u in enumerate(adopt):
            if j == 0:
                continue
            a = adopt[u]
            lo_max = (a - 1) if a is not None else T
            hi_min = a if a is not None else 1
            lo = int(rng.integers(1, lo_max + 1))
            hi = int(rng.integers(max(hi_min, lo), T + 1))
            m = (df["unit"] == u).to_numpy()
            t = df["time"].to_numpy()
            keep &= ~m | ((t >= lo) & (t <= hi))
        df = df[keep]
    return validate_panel(df), beta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
