import csv
import json

import numpy as np
import pytest

from stagedid import (
    PRESETS,
    aggregated_att,
    did_regression,
    did_weights,
    did_weights_bruteforce,
    implied_estimand,
    simulate_panel,
    stacked_weights,
    true_estimands,
    validate_panel,
)
from stagedid.diagnostics import write_weights_csv, write_weights_json
from stagedid.errors import DegenerateDataset, MissingCell, NoTreatedCells

from conftest import make_frame, make_panel, random_design, toy_panel, two_by_two


def test_toy_weights():
    w = did_weights(toy_panel())
    got = {(int(c), int(t)): float(x) for c, t, x in zip(w.cohorts, w.times, w.weight)}
    assert got == pytest.approx({(1, 1): 0.5, (1, 2): 0.0, (2, 2): 0.5}, abs=1e-12)
    assert w.p_d == pytest.approx(1 / 3)
    assert np.allclose(w.p_gp, 1 / 9)


def test_toy_implied_estimand():
    w = did_weights(toy_panel())
    assert implied_estimand(w, {(1, 1): 1.0, (1, 2): 2.0, (2, 2): 3.0}) == pytest.approx(2.0)


def test_two_by_two_single_weight():
    for fn in (did_weights, did_weights_bruteforce):
        w = fn(two_by_two())
        assert w.weight.tolist() == pytest.approx([1.0])


def test_single_cohort_proportional_to_cell_share():
    p = make_panel({"a": None, "b": None, "c": 3, "d": 3}, [1, 2, 3, 4, 5])
    w = did_weights(p)
    assert np.allclose(w.weight, w.p_gp / w.p_gp.sum())
    assert w.weight.sum() == pytest.approx(1.0, abs=1e-12)


def test_uniform_grid_returns_constant():
    p = simulate_panel(PRESETS["sim2"], 0)
    w = did_weights(p)
    grid = {(int(c), int(t)): 1.7 for c, t in zip(w.cohorts, w.times)}
    assert implied_estimand(w, grid) == pytest.approx(1.7, abs=1e-12)


def test_missing_cell():
    w = did_weights(toy_panel())
    with pytest.raises(MissingCell):
        implied_estimand(w, {(1, 1): 1.0, (2, 2): 3.0})


def test_no_treated_cells():
    with pytest.raises(NoTreatedCells):
        did_weights(make_panel({"a": None, "b": None}, [1, 2]))


def test_sim1_weights_decline_with_duration_after_stabilization():
    w = did_weights(simulate_panel(PRESETS["sim1"], 0))
    # from time 6 on every cohort is treated; earlier cohorts (longer durations) get less weight
    for t in range(6, 11):
        m = w.times == t
        order = np.argsort(w.cohorts[m])
        assert np.all(np.diff(w.weight[m][order]) > 0)
    # within a cohort, weights fall with calendar time after stabilization
    for c in (4, 5, 6):
        m = (w.cohorts == c) & (w.times >= 6)
        assert np.all(np.diff(w.weight[m]) <= 1e-12)


def test_sim1_true_grid_implied_near_did_mc():
    cfg = PRESETS["sim1"]
    w = did_weights(simulate_panel(cfg, 0))
    grid = {(a, t): cfg.effect(k, t - a + 1) for k, a in enumerate(cfg.adoption) for t in range(a, 11)}
    implied = implied_estimand(w, grid)
    assert implied == pytest.approx(3.51, abs=0.08)


@pytest.mark.parametrize("seed", range(20))
def test_closed_form_matches_bruteforce(seed):
    p, _ = random_design(np.random.default_rng(100 + seed), weighted=seed % 2 == 1)
    a, b = did_weights(p), did_weights_bruteforce(p)
    assert a.method == "closed_form"
    assert np.abs(a.weight - b.weight).max() < 1e-9


def test_unbalanced_falls_back_to_bruteforce():
    p, _ = random_design(np.random.default_rng(5), balanced=False)
    if p.is_balanced:
        pytest.skip("draw happened to be balanced")
    w = did_weights(p)
    assert w.method == "bruteforce"
    assert w.weight.sum() == pytest.approx(1.0, abs=1e-10)
    grid = aggregated_att(p)[1]
    assert did_regression(p).point == pytest.approx(implied_estimand(w, grid), abs=1e-8)


def test_numerator_component_monotone_in_duration():
    short = did_weights(make_panel({"n": None, "a": 4, "b": 3}, range(1, 7)))
    long = did_weights(make_panel({"n": None, "a": 2, "b": 3}, range(1, 7)))
    # cohort "a" treated longer -> larger P(D|g) -> smaller 1 - P(D|g)
    pg_short = short.p_d_given_g[short.cohorts == 4][0]
    pg_long = long.p_d_given_g[long.cohorts == 2][0]
    assert 1 - pg_long < 1 - pg_short


def test_stacked_equal_shares():
    sw = stacked_weights([5, 5, 5], 35, pre=2, post=4)
    assert np.allclose(sw.weight, 1 / 12)
    assert sw.weight.sum() == pytest.approx(1.0, abs=1e-12)
    assert sw.tau == pytest.approx(4 / 7)


def test_stacked_single_cohort():
    sw = stacked_weights([8], 10, pre=1, post=5)
    assert np.allclose(sw.weight, 0.2)


def test_stacked_sim2_overstates():
    cfg = PRESETS["sim2"]
    sw = stacked_weights(cfg.cohort_sizes, cfg.n_never, pre=2, post=4)
    assert np.argmax(sw.cohort_weight) == 1
    assert np.all(sw.weight >= 0)
    assert sw.implied(cfg.effects) > true_estimands(cfg)["capped(4)"]


def test_stacked_degenerate():
    with pytest.raises(DegenerateDataset):
        stacked_weights([5, 0], 10, pre=1, post=2)
    with pytest.raises(DegenerateDataset):
        stacked_weights([5], 0, pre=1, post=2)


def test_weight_exports(tmp_path):
    w = did_weights(toy_panel())
    write_weights_csv(w, tmp_path / "w.csv")
    write_weights_json(w, tmp_path / "w.json")
    with open(tmp_path / "w.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["group", "period", "weight", "p_d_given_g", "p_d_given_p", "p_d", "p_gp"]
    assert [(r[0], r[1]) for r in rows[1:]] == [("1", "1"), ("1", "2"), ("2", "2")]
    assert float(rows[1][2]) == pytest.approx(0.5)
    doc = json.loads((tmp_path / "w.json").read_text())
    assert doc["method"] == "closed_form" and len(doc["cells"]) == 3


def test_row_weights_reproduce_unit_level_shares():
    # duplicating a unit equals giving it weight 2
    adopt = {"a": None, "b": 2, "c": 3}
    dup = dict(adopt, b2=2)
    p1 = make_panel(dup, [1, 2, 3])
    p2 = validate_panel(make_frame(adopt, [1, 2, 3], weights={"a": 1, "b": 2, "c": 1}))
    assert np.allclose(did_weights(p1).weight, did_weights(p2).weight, atol=1e-12)
