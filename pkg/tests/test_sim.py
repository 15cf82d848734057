import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cachebf.beamforming import ChannelRealization, from_dbw, sca_solve, to_dbw, verify_feasibility
from cachebf.caching import make_instance
from cachebf.errors import ConfigError
from cachebf.scheduler import ScheduleConfig, full_superposition, greedy_schedule
from cachebf.sim import (CSV_COLUMNS, aggregate, CellConfig, Scheme, SweepSpec, draw_channels,
                         format_table1, path_loss_db, reproduce_table1, rows_to_csv, run_sweep,
                         run_trials, solve_scheme, trial_rng, write_outputs)

# printed slot counts: (K, t, s, beta, alpha) -> (B_u, B_l, B_u/B_l)
PRINTED_TABLE = {
    (10, 1, 1, 1, 1): (9, 45, 0.2), (10, 1, 1, 1, 3): (9, 630, 0.0143),
    (10, 1, 1, 1, 5): (9, 3150, 0.0029), (10, 1, 1, 1, 7): (9, 4725, 0.0019),
    (10, 1, 1, 1, 9): (9, 945, 0.0095),
    (10, 2, 1, 1, 1): (40, 120, 0.3333), (10, 2, 1, 1, 4): (40, 2100, 0.0190),
    (10, 2, 1, 1, 7): (40, 2800, 0.0143),
    (10, 3, 1, 1, 1): (105, 210, 0.5), (10, 3, 1, 1, 5): (105, 1575, 0.0667),
}


def test_path_loss_examples():
    assert path_loss_db(1000.0) == pytest.approx(148.1)
    assert path_loss_db(500.0) == pytest.approx(148.1 + 37.6 * math.log10(0.5))
    assert path_loss_db(500.0) == pytest.approx(136.78, abs=5e-3)


def test_channel_draw_deterministic():
    a = draw_channels(CellConfig(), 5, 6, trial_rng(7, 3))
    b = draw_channels(CellConfig(), 5, 6, trial_rng(7, 3))
    c = draw_channels(CellConfig(), 5, 6, trial_rng(7, 4))
    assert np.array_equal(a.H, b.H) and not np.array_equal(a.H, c.H)
    assert np.allclose(a.noise, from_dbw(-134.0))


def test_channel_statistics():
    # path gain bounded by the annulus; fading unit power on average
    cell = CellConfig()
    g_hi = 10 ** (-path_loss_db(cell.min_distance_m) / 10)
    g_lo = 10 ** (-path_loss_db(cell.radius_m) / 10)
    norms = []
    for trial in range(200):
        ch = draw_channels(cell, 4, 8, trial_rng(0, trial))
        gain = np.mean(np.abs(ch.H) ** 2, axis=1)
        norms.append(gain)
    norms = np.concatenate(norms)
    assert norms.min() > 0.05 * g_lo and norms.max() < 5 * g_hi
    with pytest.raises(ConfigError):
        CellConfig(min_distance_m=600.0)


@given(st.floats(1e-15, 1e15))
def test_dbw_roundtrip(p):
    assert from_dbw(to_dbw(p)) == pytest.approx(p, rel=1e-12)


def test_table_rows_match_printed():
    rows = reproduce_table1()
    assert len(rows) == 10
    for r in rows:
        key = (r["K"], r["t"], r["s"], r["beta"], r["alpha"])
        assert (r["B_u"], r["B_l"], r["ratio"]) == PRINTED_TABLE[key]
        assert r["users_per_slot_ratio"] == Fraction(r["K"], r["t"] + r["alpha"])
    text = format_table1(rows)
    assert text.splitlines()[1].split() == ["10", "1", "1", "(1,1)", "5", "9", "45", "0.2000"]


def test_scheme_parse():
    assert Scheme.parse("fs").label == "FS"
    assert Scheme.parse("greedy:s=2") == Scheme("greedy", s=2)
    assert Scheme.parse(" joint:s=3, B=3 ").label == "joint(s=3,B=3)"
    assert Scheme.parse("baseline:alpha=2").decode_limit(5, 1) == 2
    assert Scheme.parse("fs").decode_limit(5, 1) == 4
    for bad in ["greedy", "greedy:s", "greedy:q=1", "magic:s=1", "joint:s=2", "greedy:s=x"]:
        with pytest.raises(ConfigError):
            Scheme.parse(bad)


def test_fs_equals_full_budget_greedy():
    inst = make_instance(5, 5, 1, 4.0, 6)
    assert greedy_schedule(inst, ScheduleConfig(4)).slots == full_superposition(inst).slots
    ch = draw_channels(CellConfig(), 5, 6, trial_rng(1, 0))
    a, _ = solve_scheme(Scheme.parse("fs"), inst, ch)
    b, _ = solve_scheme(Scheme.parse("greedy:s=4"), inst, ch)
    assert a == b


def test_zero_rate_zero_power():
    spec = SweepSpec(5, 5, 1, 6, (0.0,), (Scheme.parse("fs"), Scheme.parse("greedy:s=2"),
                                          Scheme.parse("baseline:alpha=2")), trials=2)
    for rec in run_trials(spec):
        assert rec["power"] == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_paired_fs_not_worse(seed):
    ch = draw_channels(CellConfig(), 5, 6, trial_rng(seed, 0))
    inst = make_instance(5, 5, 1, 6.0, 6, ch.noise)
    fs = sca_solve(full_superposition(inst), ch)
    assert verify_feasibility(fs, full_superposition(inst), ch).feasible
    for s in (1, 2, 3):
        g = sca_solve(greedy_schedule(inst, ScheduleConfig(s)), ch)
        # FS is a local method too; allow a small band for its stationary point
        assert to_dbw(fs.power) <= to_dbw(g.power) + 0.5


def test_csv_reproducible(tmp_path):
    spec = SweepSpec(4, 4, 1, 3, (1.0, 2.0), (Scheme.parse("fs"), Scheme.parse("greedy:s=1")),
                     trials=2, seed=5)
    p1, gp = write_outputs(run_sweep(spec), tmp_path / "a.csv")
    p2, _ = write_outputs(run_sweep(spec), tmp_path / "b.csv")
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 5
    assert "plot 'a.csv'" in gp.read_text()


def test_worker_count_does_not_change_results():
    spec = SweepSpec(4, 4, 1, 3, (2.0,), (Scheme.parse("greedy:s=2"),), trials=3)
    par = SweepSpec(4, 4, 1, 3, (2.0,), (Scheme.parse("greedy:s=2"),), trials=3, workers=2)
    assert rows_to_csv(run_sweep(spec)) == rows_to_csv(run_sweep(par))


def collinear_channels():
    # users 0 and 1 share a channel: each must see its own message stronger
    # than the other's interference, impossible once the SINR target exceeds 1
    rng = np.random.default_rng(0)
    h = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    return ChannelRealization(np.stack([h[0], h[0], h[1]]), np.ones(3))


def test_infeasible_trial_flagged():
    ch = collinear_channels()
    inst = make_instance(3, 3, 1, 6.0, 3)
    p, status = solve_scheme(Scheme.parse("fs"), inst, ch)
    assert p == math.inf and status.startswith("failed")
    spec = SweepSpec(3, 3, 1, 3, (6.0,), (Scheme.parse("fs"),), trials=2)
    recs = [{"trial": k, "R": 6.0, "scheme": "FS", "power": p, "status": status}
            for k in range(2)]
    row = aggregate(spec, recs)[0]
    assert row["trials_ok"] == 0 and row["trials_failed"] == 2 and math.isnan(row["mean_P_dBW"])
    assert "nan" in rows_to_csv([row])


def test_sweep_spec_validation(tmp_path):
    with pytest.raises(ConfigError):
        SweepSpec(4, 4, 1, 3, (2.0, 1.0), (Scheme.parse("fs"),))
    with pytest.raises(ConfigError):
        SweepSpec(4, 4, 1, 3, (-1.0,), (Scheme.parse("fs"),))
    with pytest.raises(ConfigError):
        SweepSpec(4, 4, 1, 3, (1.0,), (Scheme.parse("fs"),), trials=0)
    with pytest.raises(ConfigError):
        SweepSpec.from_mapping({"K": 4, "N": 4, "M": 1, "N_T": 3, "rates": [1], "schemes": ["fs"],
                                "colour": "red"})
    with pytest.raises(ConfigError):
        SweepSpec.from_mapping({"K": 4, "N": 4, "M": 1, "rates": [1], "schemes": ["fs"]})
    with pytest.raises(ConfigError):
        SweepSpec.from_toml(tmp_path / "missing.toml")


def test_toml_config(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text('K = 4\nN = 4\nM = 1\nN_T = 3\nrates = [1.0, 2.0]\n'
                    'schemes = ["fs", "greedy:s=1"]\ntrials = 7\nseed = 3\n'
                    '[cell]\nmin_distance_m = 50.0\n[sca]\nmax_iter = 50\n')
    spec = SweepSpec.from_toml(path)
    assert spec.trials == 7 and spec.seed == 3 and spec.rates == (1.0, 2.0)
    assert spec.cell.min_distance_m == 50.0 and spec.sca.max_iter == 50
    assert [s.label for s in spec.schemes] == ["FS", "greedy(s=1)"]
