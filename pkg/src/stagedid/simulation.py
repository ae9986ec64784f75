"""Monte Carlo harness for staggered-adoption designs.

Outcomes follow ``y_it = lam_i + gam_t + beta_{g, r} D_it + eps_it`` with
unit, time and idiosyncratic terms drawn N(0, sd^2). Cohort effects are given
as a path over durations; the last entry is held for longer durations.

Randomness is keyed by ``(seed, rep, stream)`` through
``numpy.random.SeedSequence`` feeding a PCG64 generator, so every replication
can be regenerated on its own and results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from ._design import EventStudySpec
from .errors import ConfigError, StageDiDError
from .estimators import (
    aggregated_att,
    aggregated_event_study,
    did_regression,
    naive_event_study,
    stacked_did,
    two_stage_did,
    two_stage_event_study,
)
from .panel import Panel, validate_panel

__all__ = [
    "SimConfig",
    "MCResult",
    "PRESETS",
    "SUITE",
    "simulate_panel",
    "true_estimands",
    "monte_carlo",
    "load_config",
]

_STREAM_UNIT, _STREAM_TIME, _STREAM_NOISE = 0, 1, 2


@dataclass(frozen=True)
class SimConfig:
    """Data-generating process for one Monte Carlo design."""

    cohort_sizes: tuple = (5, 5, 5)
    adoption: tuple = (4, 5, 6)
    effects: tuple = ((2, 4, 6, 8), (1, 2, 3, 4), (0.5, 1, 3, 3.5))
    n_never: int = 35
    n_times: int = 10
    noise_sd: float = 1.0
    unit_sd: float = 1.0
    time_sd: float = 1.0
    seed: int = 20200101
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "cohort_sizes", tuple(int(n) for n in self.cohort_sizes))
        object.__setattr__(self, "adoption", tuple(int(a) for a in self.adoption))
        object.__setattr__(self, "effects", tuple(tuple(float(b) for b in e) for e in self.effects))
        self.validate()

    def validate(self) -> None:
        if not (len(self.cohort_sizes) == len(self.adoption) == len(self.effects)):
            raise ConfigError("cohort_sizes, adoption and effects must have one entry per cohort")
        if self.n_times < 1:
            raise ConfigError("n_times must be >= 1")
        for a in self.adoption:
            if not 1 <= a <= self.n_times:
                raise ConfigError(f"adoption time {a} outside [1, {self.n_times}]")
        if len(set(self.adoption)) != len(self.adoption):
            raise ConfigError("adoption times must be distinct")
        if any(len(e) == 0 for e in self.effects):
            raise ConfigError("effect paths must be nonempty")
        if any(n < 1 for n in self.cohort_sizes) or self.n_never < 0:
            raise ConfigError("cohort sizes must be >= 1 and n_never >= 0")
        if min(self.noise_sd, self.unit_sd, self.time_sd) < 0:
            raise ConfigError("standard deviations must be nonnegative")

    @property
    def n_units(self) -> int:
        return self.n_never + sum(self.cohort_sizes)

    def effect(self, cohort: int, r: int) -> float:
        """Effect for cohort index ``cohort`` after ``r >= 1`` treated periods."""
        path = self.effects[cohort]
        return path[min(r, len(path)) - 1]

    def replace(self, **changes) -> "SimConfig":
        d = asdict(self)
        d.update(changes)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cohort_sizes"] = list(self.cohort_sizes)
        d["adoption"] = list(self.adoption)
        d["effects"] = [list(e) for e in self.effects]
        return d


PRESETS = {
    "sim1": SimConfig(name="sim1"),
    "sim2": SimConfig(cohort_sizes=(5, 15, 10), n_never=20, name="sim2"),
}


def load_config(path) -> SimConfig:
    """Read a JSON config; keys are the :class:`SimConfig` field names.

    ``{"preset": "sim2", "seed": 7}`` starts from a preset and overrides it.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    base = {}
    if "preset" in doc:
        name = doc.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        base = PRESETS[name].to_dict()
    unknown = set(doc) - set(SimConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base.update(doc)
    try:
        return SimConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _rng(config: SimConfig, rep: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=config.seed, spawn_key=(int(rep), stream))
    return np.random.Generator(np.random.PCG64(ss))


def simulate_panel(config: SimConfig, rep: int = 0) -> Panel:
    """Draw replication ``rep`` of the design. Times run 1..n_times."""
    U, T = config.n_units, config.n_times
    lam = config.unit_sd * _rng(config, rep, _STREAM_UNIT).standard_normal(U)
    gam = config.time_sd * _rng(config, rep, _STREAM_TIME).standard_normal(T)
    eps = config.noise_sd * _rng(config, rep, _STREAM_NOISE).standard_normal((U, T))

    adopt = np.full(U, np.nan)
    cohort_idx = np.full(U, -1)
    start = config.n_never
    for k, (n, a) in enumerate(zip(config.cohort_sizes, config.adoption)):
        adopt[start : start + n] = a
        cohort_idx[start : start + n] = k
        start += n
    times = np.arange(1, T + 1)
    effect = np.zeros((U, T))
    for i in range(config.n_never, U):
        k = cohort_idx[i]
        for j, t in enumerate(times):
            if t >= adopt[i]:
                effect[i, j] = config.effect(k, int(t - adopt[i] + 1))
    y = lam[:, None] + gam[None, :] + effect + eps
    width = len(str(U))
    units = np.array([f"u{i + 1:0{width}d}" for i in range(U)], dtype=object)
    df = pd.DataFrame(
        {
            "unit": np.repeat(units, T),
            "time": np.tile(times, U),
            "y": y.reshape(-1),
            "first_treat": np.repeat(adopt, T),
        }
    )
    return validate_panel(df)


def true_estimands(config: SimConfig, cap: int | Sequence[int] = 4) -> dict:
    """Exact estimands implied by the configured effect paths.

    Returns ``{"overall": ..., "capped(P)": ..., "by_duration": {r: ...}}``
    where every average is over treated unit x time observations.
    """
    caps = [cap] if isinstance(cap, int) else list(cap)
    cells = []  # (size, r, beta)
    for k, (n, a) in enumerate(zip(config.cohort_sizes, config.adoption)):
        for t in range(a, config.n_times + 1):
            r = t - a + 1
            cells.append((n, r, config.effect(k, r)))
    n_arr = np.array([c[0] for c in cells], dtype=float)
    r_arr = np.array([c[1] for c in cells])
    b_arr = np.array([c[2] for c in cells])
    out = {"overall": float(np.sum(n_arr * b_arr) / n_arr.sum())}
    for P in caps:
        m = r_arr <= P
        out[f"capped({P})"] = float(np.sum(n_arr[m] * b_arr[m]) / n_arr[m].sum())
    out["by_duration"] = {
        int(r): float(np.sum(n_arr[r_arr == r] * b_arr[r_arr == r]) / n_arr[r_arr == r].sum())
        for r in np.unique(r_arr)
    }
    return out


# --- estimator suite -------------------------------------------------------


def _scalar(est):
    return [(est.estimand, float(est.point), float(est.se))]


def _vector(est):
    return [(lab, float(p), float(s)) for lab, p, s in zip(est.labels, est.point, est.se)]


def _run_did(panel, opts):
    return [("overall", *_scalar(did_regression(panel))[0][1:])]


def _run_two_stage(panel, opts):
    cap = opts["cap"]
    return _scalar(two_stage_did(panel)) + _scalar(two_stage_did(panel, estimand=("capped", cap)))


def _run_aggregated(panel, opts):
    cap = opts["cap"]
    return _scalar(aggregated_att(panel)[0]) + _scalar(aggregated_att(panel, estimand=("capped", cap))[0])


def _run_stacked(panel, opts):
    est = stacked_did(panel, pre=opts["stacked_pre"], post=opts["cap"])
    return [(f"capped({opts['cap']})", float(est.point), float(est.se))]


def _es_spec(opts):
    return EventStudySpec(leads=opts["es_leads"], max_duration=opts["es_durations"])


def _run_naive_es(panel, opts):
    return _vector(naive_event_study(panel, _es_spec(opts)))


def _run_two_stage_es(panel, opts):
    return _vector(two_stage_event_study(panel, _es_spec(opts)))


def _run_aggregated_es(panel, opts):
    return _vector(aggregated_event_study(panel, _es_spec(opts)))


SUITE: dict[str, Callable] = {
    "did": _run_did,
    "aggregated": _run_aggregated,
    "two_stage": _run_two_stage,
    "stacked": _run_stacked,
    "naive_es": _run_naive_es,
    "aggregated_es": _run_aggregated_es,
    "two_stage_es": _run_two_stage_es,
}
DEFAULT_SUITE = ("did", "aggregated", "two_stage", "stacked")


@dataclass(frozen=True, eq=False)
class MCResult:
    """Per-replication draws plus summary statistics."""

    draws: pd.DataFrame  # rep, estimator, estimand, value, se
    failures: pd.DataFrame  # rep, estimator, error
    reps: int
    config: SimConfig
    seed: int
    options: dict = field(default_factory=dict)

    def summary(self) -> pd.DataFrame:
        """Mean, SD (ddof=1; 0 with ``sd_defined=False`` when n == 1) and mean SE."""
        rows = []
        for (est, estimand), grp in self.draws.groupby(["estimator", "estimand"], sort=False):
            v = grp["value"].to_numpy()
            n = v.size
            rows.append(
                {
                    "estimator": est,
                    "estimand": estimand,
                    "mean": float(v.mean()),
                    "sd": float(v.std(ddof=1)) if n > 1 else 0.0,
                    "sd_defined": n > 1,
                    "mean_se": float(grp["se"].mean()),
                    "n": n,
                }
            )
        return pd.DataFrame(rows)

    def values(self, estimator: str, estimand: str) -> np.ndarray:
        d = self.draws
        m = (d["estimator"] == estimator) & (d["estimand"] == estimand)
        return d.loc[m].sort_values("rep")["value"].to_numpy()

    def ses(self, estimator: str, estimand: str) -> np.ndarray:
        d = self.draws
        m = (d["estimator"] == estimator) & (d["estimand"] == estimand)
        return d.loc[m].sort_values("rep")["se"].to_numpy()

    def mean(self, estimator: str, estimand: str) -> float:
        return float(self.values(estimator, estimand).mean())

    def sd(self, estimator: str, estimand: str) -> float:
        v = self.values(estimator, estimand)
        return float(v.std(ddof=1)) if v.size > 1 else 0.0

    def write_draws_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["rep", "estimator", "estimand", "value", "se"])
            for row in self.draws.itertuples(index=False):
                w.writerow([row.rep, row.estimator, row.estimand, f"{row.value:.17g}", f"{row.se:.17g}"])

    def write_summary_csv(self, path) -> None:
        s = self.summary()
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "estimand", "mean", "sd", "sd_defined", "mean_se", "n"])
            for row in s.itertuples(index=False):
                w.writerow(
                    [row.estimator, row.estimand, f"{row.mean:.17g}", f"{row.sd:.17g}",
                     int(row.sd_defined), f"{row.mean_se:.17g}", row.n]
                )

    def summary_json(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "reps": self.reps,
            "seed": self.seed,
            "options": self.options,
            "true": true_estimands(self.config, self.options.get("cap", 4)),
            "summary": self.summary().to_dict(orient="records"),
            "failures": self.failures.to_dict(orient="records"),
        }


def _one_rep(args):
    config, rep, suite, opts = args
    panel = simulate_panel(config, rep)
    rows, fails = [], []
    for name in suite:
        try:
            for estimand, value, se in SUITE[name](panel, opts):
                rows.append((rep, name, estimand, value, se))
        except StageDiDError as exc:
            fails.append((rep, name, f"{type(exc).__name__}: {exc}"))
    return rows, fails


def monte_carlo(
    config: SimConfig,
    reps: int = 250,
    suite: Sequence[str] = DEFAULT_SUITE,
    cap: int = 4,
    stacked_pre: int = 2,
    es_leads: int = 1,
    es_durations: int = 4,
    n_jobs: int = 1,
) -> MCResult:
    """Run every estimator in ``suite`` on replications ``0..reps-1``.

    Estimator errors are recorded in ``failures`` rather than raised. Output
    is ordered by replication and identical for any ``n_jobs``.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    unknown = [s for s in suite if s not in SUITE]
    if unknown:
        raise ConfigError(f"unknown estimators {unknown}; choose from {sorted(SUITE)}")
    opts = {"cap": cap, "stacked_pre": stacked_pre, "es_leads": es_leads, "es_durations": es_durations}
    jobs = [(config, rep, tuple(suite), opts) for rep in range(reps)]
    if n_jobs == 1:
        results = [_one_rep(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_one_rep, jobs, chunksize=max(1, math.ceil(reps / (4 * n_jobs)))))
    rows = [r for res in results for r in res[0]]
    fails = [f for res in results for f in res[1]]
    draws = pd.DataFrame(rows, columns=["rep", "estimator", "estimand", "value", "se"])
    failures = pd.DataFrame(fails, columns=["rep", "estimator", "error"])
    return MCResult(draws=draws, failures=failures, reps=reps, config=config, seed=config.seed, options=opts)
