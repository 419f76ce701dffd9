import numpy as np
import pytest

from spilldid.panel import (
    NEVER, PanelError, baseline_period, load_panel, long_difference, save_panel,
)

from conftest import make_panel


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_panel_defaults_weight_to_one(tmp_path):
    lines = ["unit,period,outcome,cohort"]
    for u in range(1, 5):
        for t in range(1, 7):
            lines.append(f"{u},{t},{u + 0.5 * t},never")
    ds = load_panel(write_csv(tmp_path / "p.csv", "\n".join(lines) + "\n"))
    assert ds.n_units == 4 and ds.n_periods == 6
    np.testing.assert_array_equal(ds.weight, np.ones(4))


def test_cohort_gives_absorbing_treatment(tmp_path):
    lines = ["unit,period,outcome,cohort"]
    for t in range(1, 7):
        lines.append(f"7,{t},{t * 1.0},3")
        lines.append(f"8,{t},{t * 2.0},never")
    ds = load_panel(write_csv(tmp_path / "p.csv", "\n".join(lines) + "\n"))
    i = ds.unit_ids.index("7")
    assert ds.cohort[i] == 3
    d = ds.treatment_matrix()
    np.testing.assert_array_equal(d[i], [0, 0, 1, 1, 1, 1])
    assert np.all(d[:, :-1] <= d[:, 1:])


def test_unbalanced_panel_rejected(tmp_path):
    lines = ["unit,period,outcome,cohort"]
    for u in (1, 2):
        for t in range(1, 6):
            if u == 2 and t == 5:
                continue
            lines.append(f"{u},{t},0.0,never")
    with pytest.raises(PanelError, match="unbalanced"):
        load_panel(write_csv(tmp_path / "p.csv", "\n".join(lines) + "\n"))


def test_duplicate_rows_rejected(tmp_path):
    text = "unit,period,outcome,cohort\n1,1,0.0,never\n1,1,1.0,never\n1,2,0.0,never\n"
    with pytest.raises(PanelError, match="duplicate"):
        load_panel(write_csv(tmp_path / "p.csv", text))


def test_non_numeric_outcome_rejected(tmp_path):
    text = "unit,period,outcome,cohort\n1,1,abc,never\n1,2,0.0,never\n"
    with pytest.raises(PanelError, match="non-numeric outcome"):
        load_panel(write_csv(tmp_path / "p.csv", text))


def test_periods_remap_to_consecutive_integers(tmp_path):
    lines = ["unit,period,outcome,cohort"]
    for u in (1, 2):
        for year in (1960, 1962, 1965):
            lines.append(f"{u},{year},{u * year / 1000},{'1962' if u == 1 else 'never'}")
    ds = load_panel(write_csv(tmp_path / "p.csv", "\n".join(lines) + "\n"))
    assert ds.n_periods == 3
    assert ds.period_labels == (1960.0, 1962.0, 1965.0)
    assert ds.cohort[ds.unit_ids.index("1")] == 2
    assert ds.cohort[ds.unit_ids.index("2")] == NEVER


def test_cohort_after_sample_end_is_never(tmp_path):
    lines = ["unit,period,outcome,cohort"]
    for t in (1, 2, 3):
        lines.append(f"1,{t},0.0,9")
    ds = load_panel(write_csv(tmp_path / "p.csv", "\n".join(lines) + "\n"))
    assert ds.cohort[0] == NEVER


def test_round_trip_is_bit_exact(tmp_path, rng):
    n, t = 7, 5
    ds = make_panel(
        outcome=rng.normal(size=(n, t)) * 1e3,
        cohort=[NEVER, 2, 3, NEVER, 5, 4, 2],
        weight=rng.uniform(0.25, 7.0, size=n),
        basis=rng.normal(size=(n, 2)),
    )
    p = tmp_path / "round.csv"
    save_panel(ds, p)
    back = load_panel(p)
    np.testing.assert_array_equal(back.outcome, ds.outcome)
    np.testing.assert_array_equal(back.weight, ds.weight)
    np.testing.assert_array_equal(back.cohort, ds.cohort)
    np.testing.assert_array_equal(back.basis, ds.basis)
    # twice through the file is stable too
    save_panel(back, tmp_path / "round2.csv")
    assert (tmp_path / "round.csv").read_text() == (tmp_path / "round2.csv").read_text()


def test_long_difference_hand_values():
    ds = make_panel(np.array([[1.0, 2.0, 3.0, 5.0]]), [NEVER])
    np.testing.assert_allclose(long_difference(ds, 4, 2), [3.0])
    with pytest.raises(ValueError):
        long_difference(ds, 2, 2)
    flat = make_panel(np.full((3, 4), 2.5), [NEVER, 2, 3])
    np.testing.assert_array_equal(long_difference(flat, 3, 1), np.zeros(3))


def test_baseline_period():
    assert baseline_period(3, 0) == 2
    assert baseline_period(5, 2) == 2
    with pytest.raises(ValueError):
        baseline_period(2, 1)
    with pytest.raises(ValueError):
        baseline_period(NEVER, 0)


def test_treated_at_first_period_rejected():
    with pytest.raises(PanelError, match="bad_cohort"):
        make_panel(np.zeros((2, 3)), [1, NEVER])


def test_nonpositive_weight_rejected():
    with pytest.raises(PanelError, match="bad_weight"):
        make_panel(np.zeros((2, 3)), [NEVER, 2], weight=[1.0, 0.0])


def test_exposure_only_units_leave_pools():
    ds = make_panel(
        np.zeros((4, 4)), [NEVER, 2, 4, NEVER],
        exposure_only=np.array([False, False, True, True]),
    )
    assert list(ds.target_cohorts) == [2]
    np.testing.assert_array_equal(ds.is_never, [True, False, False, False])


def test_derived_treatment_nondecreasing_on_random_panels(rng):
    for _ in range(20):
        n, t = rng.integers(2, 30), rng.integers(2, 9)
        cohort = rng.integers(0, t + 1, size=n)
        cohort[cohort == 1] = 0
        ds = make_panel(rng.normal(size=(n, t)), cohort)
        d = ds.treatment_matrix()
        assert np.all(d[:, :-1] <= d[:, 1:])
