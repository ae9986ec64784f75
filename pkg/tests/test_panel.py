import numpy as np
import pandas as pd
import pytest

from stagedid import (
    Observation,
    PRESETS,
    Requirements,
    cell_means,
    derive_relative_time,
    exclude_cohorts,
    read_panel_csv,
    simulate_panel,
    validate_panel,
    write_panel_csv,
)
from stagedid.errors import (
    DuplicateKey,
    EmptyCohort,
    NonAbsorbingTreatment,
    NoUntreatedObservations,
    PanelError,
    ParseError,
)

from conftest import make_frame, make_panel, two_by_two


def test_two_by_two_structure():
    obs = [
        Observation("A", 1, 0.0),
        Observation("A", 2, 0.0),
        Observation("B", 1, 0.0, adoption=2),
        Observation("B", 2, 0.0, adoption=2),
    ]
    p = validate_panel(obs)
    assert p.n_cohorts == 1
    treated = {(p.unit_labels[u], int(t)) for u, t, d in zip(p.unit, p.time, p.treated) if d}
    assert treated == {("B", 2)}


def test_duplicate_key():
    df = make_frame({"A": None, "B": 2}, [1, 2])
    df = pd.concat([df, df.iloc[[0]]])
    with pytest.raises(DuplicateKey) as exc:
        validate_panel(df)
    assert "A" in str(exc.value)


def test_sim1_design_cells():
    p = simulate_panel(PRESETS["sim1"], 0)
    assert p.n_units == 50 and p.n_obs == 500
    assert list(p.cohorts) == [4, 5, 6]
    cells = {(int(g), int(t)) for g, t, d in zip(p.group, p.time, p.treated) if d}
    assert len(cells) == 18


@pytest.mark.parametrize("a,t,r", [(4, 4, 1), (4, 3, 0), (6, 10, 5)])
def test_relative_time(a, t, r):
    assert derive_relative_time(np.array([a]), np.array([t]))[0] == r


def test_relative_time_never_treated_is_nan():
    assert np.isnan(derive_relative_time(np.array([np.nan]), np.array([3]))[0])


def test_cell_means_double_difference():
    assert cell_means(two_by_two(beta=3.0)).double_difference(1, 2) == pytest.approx(3.0, abs=1e-12)


def test_cell_means_zero():
    p = make_panel({"A": None, "B": 2, "C": 3}, [1, 2, 3])
    assert np.all(cell_means(p).mean == 0)


def test_cell_means_match_loop(rng):
    adopt = {f"u{i}": [None, 2, 3][i % 3] for i in range(9)}
    y = rng.normal(size=(9, 4))
    w = {u: rng.uniform(0.5, 2) for u in adopt}
    p = make_panel(adopt, range(1, 5), y, weights=w)
    grid = cell_means(p)
    df = p.to_frame()
    for gi in range(grid.groups.size):
        for ti, t in enumerate(grid.times):
            m = (p.group == gi) & (p.time == t)
            expect = np.sum(p.weight[m] * p.y[m]) / np.sum(p.weight[m])
            assert grid.mean[gi, ti] == pytest.approx(expect, rel=1e-12)
    total = np.nansum(grid.weight * grid.mean)
    assert total == pytest.approx(np.sum(p.weight * p.y), rel=1e-10)
    assert len(df) == p.n_obs


def test_non_absorbing_rejected():
    df = make_frame({"A": None, "B": 2}, [1, 2, 3])
    df.loc[(df.unit == "B") & (df.time == 3), "first_treat"] = 3
    with pytest.raises(NonAbsorbingTreatment):
        validate_panel(df)


def test_collects_every_problem():
    df = make_frame({"A": None, "B": 2}, [1, 2])
    df = pd.concat([df, df.iloc[[0]]])
    df["weight"] = 1.0
    df.iloc[-1, df.columns.get_loc("weight")] = -1.0
    with pytest.raises(PanelError) as exc:
        validate_panel(df)
    assert len(exc.value.problems) >= 2


def test_requirements_untreated_each_time():
    adopt = {"A": 2, "B": 3}
    with pytest.raises(NoUntreatedObservations):
        validate_panel(make_frame(adopt, [1, 2, 3]), Requirements(untreated_each_time=True))


def test_adoption_after_sample_is_empty_cohort():
    with pytest.raises(EmptyCohort):
        make_panel({"A": None, "B": 9}, [1, 2, 3])


def test_always_treated_dropped_by_default():
    p = make_panel({"A": None, "B": 1, "C": 2}, [1, 2, 3])
    assert "B" in p.dropped_units
    assert list(p.cohorts) == [2]
    kept = validate_panel(make_frame({"A": None, "B": 1, "C": 2}, [1, 2, 3]), Requirements(always_treated="keep"))
    assert kept.n_units == 3


def test_exclude_cohorts():
    p = simulate_panel(PRESETS["sim1"], 0)
    q = exclude_cohorts(p, [5, 6])
    assert list(q.cohorts) == [4] and q.n_units == 40


def test_panel_is_read_only():
    p = two_by_two()
    with pytest.raises(ValueError):
        p.y[0] = 1.0


def test_csv_round_trip(tmp_path):
    p = simulate_panel(PRESETS["sim2"], 3)
    path = tmp_path / "p.csv"
    write_panel_csv(p, path)
    q = read_panel_csv(path)
    assert np.array_equal(p.y, q.y)
    assert np.array_equal(p.time, q.time)
    assert list(p.cohorts) == list(q.cohorts)


@pytest.mark.parametrize(
    "body,row,column",
    [
        ("A,1,1.0,\nA,x,2.0,\n", 3, "time"),
        ("A,1,1.0,\nA,2,\"1,5\",\n", 3, "y"),
        ("A,1,nan,\n", 2, "y"),
        ("A,1,1.0,2.5\n", 2, "first_treat"),
    ],
)
def test_csv_parse_errors(tmp_path, body, row, column):
    path = tmp_path / "bad.csv"
    path.write_text("unit,time,y,first_treat\n" + body, encoding="utf-8")
    with pytest.raises(ParseError) as exc:
        read_panel_csv(path)
    assert exc.value.row == row and exc.value.column == column


def test_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("unit,time\nA,1\n", encoding="utf-8")
    with pytest.raises(ParseError):
        read_panel_csv(path)
