"""Command-line front end.

    stagedid estimate panel.csv --method two-stage --estimand capped:4
    stagedid event-study panel.csv --method naive --leads 1 --durations 4
    stagedid weights --preset sim1
    stagedid simulate --preset sim2 --reps 250 --out results/
    stagedid make-panel --preset sim1 --rep 0 panel.csv

Machine outputs (JSON/CSV under ``--out``) carry full precision; tables on
stdout are rounded to 3 decimals. Exit status is 0 on success, 1 when the
data or an estimator raises, 2 on bad usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._design import EventStudySpec, parse_estimand
from .diagnostics import did_weights, write_weights_csv
from .errors import ConfigError, ParseError, StageDiDError
from .estimators import (
    aggregated_att,
    aggregated_event_study,
    did_regression,
    naive_event_study,
    stacked_did,
    two_stage_did,
    two_stage_event_study,
)
from .panel import Panel, exclude_cohorts, read_panel_csv, write_panel_csv
from .simulation import DEFAULT_SUITE, PRESETS, SUITE, load_config, monte_carlo, simulate_panel, true_estimands

ESTIMATE_COLUMNS = ("method", "estimand", "term", "estimate", "se", "ci_low", "ci_high", "n_obs", "n_clusters")
EVENT_COLUMNS = ("method", "term", "r", "estimate", "se", "ci_low", "ci_high")


def _g(x) -> str:
    return f"{x:.17g}" if isinstance(x, float) else str(x)


def _write_csv(path: Path, columns, records) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for rec in records:
            w.writerow([_g(rec[c]) for c in columns])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _fingerprint(panel: Panel) -> dict:
    unit_adopt = {}
    for u, a in zip(panel.unit, panel.adoption):
        unit_adopt[int(u)] = a
    sizes = {int(c): int(sum(1 for a in unit_adopt.values() if a == c)) for c in panel.cohorts}
    return {
        "rows": panel.n_obs,
        "units": panel.n_units,
        "times": [int(panel.times[0]), int(panel.times[-1])],
        "cohort_sizes": sizes,
        "never_treated": int(sum(1 for a in unit_adopt.values() if np.isnan(a))),
        "dropped_units": list(panel.dropped_units),
    }


def _table(headers, rows) -> str:
    cells = [[f"{v:.3f}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(headers)]
    line = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    out = [line, "-" * len(line)]
    out += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(out)


def _load(args) -> Panel:
    if getattr(args, "csv", None):
        return read_panel_csv(args.csv, cluster_column=args.cluster)
    if getattr(args, "preset", None):
        cfg = PRESETS[args.preset]
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        return simulate_panel(cfg, getattr(args, "rep", 0))
    raise ConfigError("give a CSV path or --preset")


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _report(args, argv, panel, results, caught) -> dict:
    return {
        "command": ["stagedid", *argv],
        "version": __version__,
        "input": _fingerprint(panel) if panel is not None else None,
        "results": results,
        "warnings": [str(w.message) for w in caught],
    }


def cmd_estimate(args, argv) -> int:
    panel = _load(args)
    se = "naive" if args.naive_se else "gmm"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.method == "did":
            est = did_regression(panel)
        elif args.method == "two-stage":
            est = two_stage_did(panel, estimand=args.estimand, first_stage=args.first_stage, se=se)
        elif args.method == "aggregated":
            est = aggregated_att(panel, estimand=args.estimand)[0]
        else:
            cap = parse_estimand(args.estimand)
            post = args.durations if args.durations is not None else cap
            if post is None:
                raise ConfigError("stacked needs --durations P or --estimand capped:P")
            est = stacked_did(panel, pre=args.pre, post=post, controls=args.controls)
    recs = est.to_records()
    print(_table(("method", "estimand", "estimate", "se", "ci_low", "ci_high", "N", "clusters"),
                 [(r["method"], r["estimand"], r["estimate"], r["se"], r["ci_low"], r["ci_high"],
                   r["n_obs"], r["n_clusters"]) for r in recs]))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = _out_dir(args)
    if out is not None:
        _write_csv(out / "estimates.csv", ESTIMATE_COLUMNS, recs)
        _write_json(out / "estimates.json", _report(args, argv, panel, recs, caught))
    return 0


def cmd_event_study(args, argv) -> int:
    panel = _load(args)
    if args.exclude:
        panel = exclude_cohorts(panel, args.exclude)
    spec = EventStudySpec(leads=args.leads, max_duration=args.durations, cap_durations=args.cap_durations)
    se = "naive" if args.naive_se else "gmm"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.method == "naive":
            est = naive_event_study(panel, spec)
        elif args.method == "two-stage":
            est = two_stage_event_study(panel, spec, first_stage=args.first_stage, se=se)
        else:
            est = aggregated_event_study(panel, spec)
    recs = est.to_records()
    rows = []
    for r in recs:
        r["r"] = int(r["term"].split("=", 1)[1])
        rows.append((r["term"], r["estimate"], r["se"], r["ci_low"], r["ci_high"]))
    print(f"{est.method}: N={est.n_obs}, clusters={est.n_clusters}")
    print(_table(("term", "estimate", "se", "ci_low", "ci_high"), rows))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = _out_dir(args)
    if out is not None:
        _write_csv(out / "event_study.csv", EVENT_COLUMNS, recs)
        _write_json(out / "estimates.json", _report(args, argv, panel, recs, caught))
    return 0


def cmd_weights(args, argv) -> int:
    panel = _load(args)
    decomp = did_weights(panel)
    rows = [(r["group"], r["period"], r["period"] - r["group"] + 1, r["weight"]) for r in decomp.records()]
    print(_table(("group", "period", "duration", "weight"), rows))
    n_neg, mass = decomp.negative_summary()
    print(f"{len(rows)} treated cells, {n_neg} negative weights, negative mass {mass:.3f}")
    out = _out_dir(args)
    if out is not None:
        write_weights_csv(decomp, out / "weights.csv")
        _write_json(
            out / "estimates.json",
            _report(args, argv, panel, {"method": decomp.method, "n_negative": n_neg,
                                        "negative_mass": mass, "cells": decomp.records()}, []),
        )
    return 0


_TABLE_ROWS = (
    ("Diff-in-diff", "did", "overall"),
    ("Aggregated", "aggregated", "overall"),
    ("Two-stage", "two_stage", "overall"),
    ("Aggregated", "aggregated", "capped"),
    ("Stacked", "stacked", "capped"),
    ("Two-stage", "two_stage", "capped"),
)


def cmd_simulate(args, argv) -> int:
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    cfg = load_config(args.config) if args.config else PRESETS[args.preset or "sim1"]
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    suite = args.suite.split(",") if args.suite else list(DEFAULT_SUITE)
    res = monte_carlo(cfg, args.reps, suite=suite, cap=args.durations, stacked_pre=args.pre,
                      es_leads=args.leads, es_durations=args.durations, n_jobs=args.jobs)
    truth = true_estimands(cfg, args.durations)
    summ = res.summary()
    cap_label = f"capped({args.durations})"
    rows = [("All periods", "True", truth["overall"], "")]
    for panel_name, key in (("All periods", "overall"), (f"{args.durations}-period", "capped")):
        if key == "capped":
            rows.append((panel_name, "True", truth[cap_label], ""))
        for name, est, which in _TABLE_ROWS:
            if which != key:
                continue
            estimand = "overall" if key == "overall" else cap_label
            m = summ[(summ.estimator == est) & (summ.estimand == estimand)]
            if len(m):
                rows.append((panel_name, name, float(m["mean"].iloc[0]), f"({m['sd'].iloc[0]:.3f})"))
    print(f"{cfg.name}: {args.reps} replications, seed {cfg.seed}")
    print(_table(("", "", "mean", "sd"), rows))
    other = summ[~summ.estimator.isin([e for _, e, _ in _TABLE_ROWS])]
    if len(other):
        print(_table(("estimator", "estimand", "mean", "sd"),
                     [(r.estimator, r.estimand, r.mean, r.sd) for r in other.itertuples()]))
    if len(res.failures):
        print(f"warning: {len(res.failures)} estimator failures recorded", file=sys.stderr)
    out = _out_dir(args)
    if out is not None:
        res.write_summary_csv(out / "mc_summary.csv")
        res.write_draws_csv(out / "mc_draws.csv")
        doc = res.summary_json()
        doc["command"] = ["stagedid", *argv]
        _write_json(out / "mc_summary.json", doc)
    return 0


def cmd_make_panel(args, argv) -> int:
    cfg = load_config(args.config) if args.config else PRESETS[args.preset or "sim1"]
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    write_panel_csv(simulate_panel(cfg, args.rep), args.path)
    return 0


def _add_panel_source(p, csv_required=False):
    if csv_required:
        p.add_argument("csv", help="panel CSV: unit,time,y[,first_treat][,cluster][,weight]")
    else:
        p.add_argument("csv", nargs="?", help="panel CSV (or use --preset)")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--seed", type=int)
        p.add_argument("--rep", type=int, default=0)
    p.add_argument("--cluster", metavar="COL", help="cluster column (default: cluster, else unit)")
    p.add_argument("--out", metavar="DIR")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stagedid", description="Staggered-adoption DiD estimators.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="overall or capped treatment effect")
    _add_panel_source(p)
    p.add_argument("--method", choices=("did", "two-stage", "aggregated", "stacked"), default="two-stage")
    p.add_argument("--estimand", default="overall", help="overall | capped:P")
    p.add_argument("--first-stage", choices=("untreated", "interacted", "saturated"), default="untreated")
    p.add_argument("--naive-se", action="store_true", help="second-stage SEs without the first-stage correction")
    p.add_argument("--durations", type=int, help="stacked: post-adoption window length")
    p.add_argument("--pre", type=int, default=2, help="stacked: pre-adoption window length")
    p.add_argument("--controls", choices=("never", "not_yet"), default="never")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("event-study", help="lead and duration effects")
    _add_panel_source(p)
    p.add_argument("--method", choices=("naive", "two-stage", "aggregated"), default="two-stage")
    p.add_argument("--leads", type=int, default=1, help="R: leads -R..0")
    p.add_argument("--durations", type=int, default=4, help="P: durations 1..P")
    p.add_argument("--cap-durations", action="store_true", help="drop observations beyond P")
    p.add_argument("--exclude", type=int, nargs="*", default=[], metavar="COHORT")
    p.add_argument("--first-stage", choices=("untreated", "interacted", "saturated"), default="untreated")
    p.add_argument("--naive-se", action="store_true")
    p.set_defaults(func=cmd_event_study)

    p = sub.add_parser("weights", help="implicit DiD regression weights")
    _add_panel_source(p)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("simulate", help="Monte Carlo study")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--config", metavar="JSON")
    p.add_argument("--reps", type=int, default=250)
    p.add_argument("--seed", type=int)
    p.add_argument("--suite", help=f"comma-separated subset of {','.join(SUITE)}")
    p.add_argument("--durations", type=int, default=4, help="P for capped estimands and event studies")
    p.add_argument("--leads", type=int, default=1)
    p.add_argument("--pre", type=int, default=2)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-panel", help="write one simulated panel as CSV")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--config", metavar="JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("path")
    p.set_defaults(func=cmd_make_panel)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, argv)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (StageDiDError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
