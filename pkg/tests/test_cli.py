import csv
import json

import numpy as np
import pytest

from stagedid import PRESETS, did_weights, read_panel_csv, simulate_panel, two_stage_did, write_panel_csv
from stagedid.cli import main

from conftest import make_frame


@pytest.fixture
def sim1_csv(tmp_path):
    path = tmp_path / "sim1.csv"
    assert main(["make-panel", "--preset", "sim1", str(path)]) == 0
    return path


def _to_csv(df, path):
    df.assign(first_treat=df["first_treat"].astype("Int64")).to_csv(path, index=False)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_two_by_two_did(tmp_path, capsys):
    path = tmp_path / "p.csv"
    path.write_text("unit,time,y,first_treat\nA,1,1.0,\nA,2,1.5,\nB,1,2.0,2\nB,2,5.5,2\n")
    assert main(["estimate", str(path), "--method", "did", "--out", str(tmp_path / "o")]) == 0
    assert "3.000" in capsys.readouterr().out
    rec = _rows(tmp_path / "o" / "estimates.csv")[0]
    assert float(rec["estimate"]) == pytest.approx(3.0, abs=1e-12)


def test_round_trip_matches_library(sim1_csv, tmp_path):
    assert main(["estimate", str(sim1_csv), "--method", "two-stage", "--out", str(tmp_path / "o")]) == 0
    rec = _rows(tmp_path / "o" / "estimates.csv")[0]
    lib = two_stage_did(read_panel_csv(sim1_csv))
    direct = two_stage_did(simulate_panel(PRESETS["sim1"], 0))
    assert float(rec["estimate"]) == lib.point == direct.point
    assert float(rec["se"]) == lib.se
    doc = json.loads((tmp_path / "o" / "estimates.json").read_text())
    assert doc["input"]["rows"] == 500 and doc["results"][0]["estimate"] == lib.point


@pytest.mark.parametrize("method", ["did", "two-stage", "aggregated", "stacked"])
def test_every_method_runs(sim1_csv, method):
    assert main(["estimate", str(sim1_csv), "--method", method, "--estimand", "capped:4"]) == 0


def test_stacked_window_error(sim1_csv, capsys):
    rc = main(["estimate", str(sim1_csv), "--method", "stacked", "--durations", "6"])
    assert rc == 1
    assert "cohort 6" in capsys.readouterr().err


def test_parse_error_exit(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("unit,time,y\nA,1,abc\n")
    assert main(["estimate", str(path)]) == 1
    err = capsys.readouterr().err
    assert "row 2" in err and "'y'" in err


def test_event_study_outputs(sim1_csv, tmp_path):
    out = tmp_path / "o"
    assert main(["event-study", str(sim1_csv), "--method", "naive", "--leads", "1", "--durations", "4", "--out", str(out)]) == 0
    naive = _rows(out / "event_study.csv")
    assert [r["term"] for r in naive] == ["r=-1", "r=0", "r=1", "r=2", "r=3", "r=4"]
    r0 = naive[0]
    assert float(r0["ci_low"]) == pytest.approx(float(r0["estimate"]) - 1.96 * float(r0["se"]))
    assert main(["event-study", str(sim1_csv), "--leads", "0", "--durations", "3", "--out", str(out)]) == 0
    assert [r["r"] for r in _rows(out / "event_study.csv")] == ["0", "1", "2", "3"]


def test_event_study_noiseless_homogeneous(tmp_path):
    path = tmp_path / "h.csv"
    cfg = PRESETS["sim1"].replace(noise_sd=0.0, unit_sd=0.0, effects=((2.0,), (2.0,), (2.0,)))
    write_panel_csv(simulate_panel(cfg, 0), path)
    for method in ("naive", "two-stage", "aggregated"):
        assert main(["event-study", str(path), "--method", method, "--out", str(tmp_path / method)]) == 0
        est = [float(r["estimate"]) for r in _rows(tmp_path / method / "event_study.csv")]
        assert np.allclose(est, [0, 0, 2, 2, 2, 2], atol=1e-9)


def test_event_study_exclusion(sim1_csv, tmp_path):
    out = tmp_path / "o"
    assert main(["event-study", str(sim1_csv), "--method", "aggregated", "--exclude", "6", "--out", str(out)]) == 0
    doc = json.loads((out / "estimates.json").read_text())
    assert doc["results"][0]["n_obs"] == 450


def test_weights_toy(tmp_path, capsys):
    df = make_frame({"g0": None, "g1": 1, "g2": 2}, range(3))
    path = tmp_path / "toy.csv"
    _to_csv(df, path)
    assert main(["weights", str(path), "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "weights.csv")
    got = [(int(r["group"]), int(r["period"]), round(float(r["weight"]), 12)) for r in rows]
    assert got == [(1, 1, 0.5), (1, 2, 0.0), (2, 2, 0.5)]
    assert "negative" in capsys.readouterr().out


def test_weights_single_cohort(tmp_path):
    df = make_frame({"a": None, "b": 3}, range(1, 6))
    path = tmp_path / "s.csv"
    _to_csv(df, path)
    assert main(["weights", str(path), "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "weights.csv")
    assert len(rows) == 3
    assert sum(float(r["weight"]) for r in rows) == pytest.approx(1.0, abs=1e-12)


def test_weights_preset(tmp_path):
    assert main(["weights", "--preset", "sim1", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "weights.csv")
    assert len(rows) == 18
    w = did_weights(simulate_panel(PRESETS["sim1"], 0))
    assert [float(r["weight"]) for r in rows] == w.weight.tolist()


def test_simulate_reps_zero(capsys):
    assert main(["simulate", "--reps", "0"]) == 1
    assert "reps" in capsys.readouterr().err


def test_simulate_deterministic_files(tmp_path, capsys):
    out = tmp_path / "o"
    args = ["simulate", "--preset", "sim1", "--reps", "5", "--seed", "3", "--out", str(out)]
    assert main(args) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(args) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first == second
    assert set(first) == {"mc_summary.csv", "mc_draws.csv", "mc_summary.json"}
    table = capsys.readouterr().out
    for label in ("True", "Diff-in-diff", "Aggregated", "Two-stage", "Stacked"):
        assert label in table


def test_simulate_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "sim2", "seed": 1}))
    assert main(["simulate", "--config", str(cfg), "--reps", "2", "--suite", "did", "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "mc_draws.csv")
    assert len(rows) == 2 and rows[0]["estimator"] == "did"


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "x.csv", "--method", "bogus"])
    assert exc.value.code == 2
