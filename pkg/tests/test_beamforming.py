import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cachebf.beamforming import (BeamformingSolution, ChannelRealization, SCAConfig,
                                 average_power, from_dbw, mac_constraint_set, sca_solve, sdr_init,
                                 sinr, to_dbw, verify_feasibility, zero_forcing_init)
from cachebf.caching import make_instance
from cachebf.errors import InitializationError, InputError
from cachebf.scheduler import (ScheduleConfig, baseline_plan, full_superposition, greedy_schedule,
                               plan_from_partition)
from conftest import assert_monotone, rayleigh


def single_user_setup(R, noise=0.7, seed=0, N_T=3):
    """User 1 sees a scaled copy of user 0's channel, so only user 0 binds and
    the multicast problem reduces to the matched-filter closed form."""
    rng = np.random.default_rng(seed)
    h = rayleigh(1, N_T, rng).H[0]
    ch = ChannelRealization(np.stack([h, 2 * h]), [noise, noise])
    plan = full_superposition(make_instance(2, 2, 1, R, N_T))
    rho = R / 2
    return ch, plan, (2 ** rho - 1) * noise / np.linalg.norm(h) ** 2


# -- SINR and descriptors ------------------------------------------------

def test_sinr_matched_filter():
    rng = np.random.default_rng(0)
    ch = rayleigh(3, 4, rng, noise=0.5)
    h = ch.H[0]
    W = np.zeros((3, 4), dtype=complex)  # K=3, t=1 messages (0,1),(0,2),(1,2)
    W[0] = 1.5 * h / np.linalg.norm(h)
    assert sinr(W, ch, 0, 0, 1) == pytest.approx(1.5 ** 2 * np.linalg.norm(h) ** 2 / 0.5)
    # interferer orthogonal to h_0 leaves the SINR unchanged
    v = ch.H[1] - (h.conj() @ ch.H[1]) / (h.conj() @ h) * h
    W[2] = v
    assert abs(h.conj() @ v) < 1e-12
    assert sinr(W, ch, 0, 0, 1) == pytest.approx(1.5 ** 2 * np.linalg.norm(h) ** 2 / 0.5)
    W[0] = 0
    assert sinr(W, ch, 0, 0, 1) == 0.0
    with pytest.raises(InputError):
        sinr(W, ch, 0, 2, 1)


def test_sinr_other_targeted_messages_not_interference():
    rng = np.random.default_rng(1)
    ch = rayleigh(3, 3, rng)
    W = rng.standard_normal((3, 3)) + 0j
    g = np.abs(W.conj() @ ch.H[0]) ** 2
    # user 0: messages 0 and 1 target it, message 2 interferes
    assert sinr(W, ch, 0, 0, 1) == pytest.approx(g[0] / (g[2] + 1.0))


def test_descriptor_counts():
    plan5 = full_superposition(make_instance(5, 5, 1, 1.0, 6))
    counts = [len(mac_constraint_set(plan5, k, 0)) for k in range(5)]
    assert counts == [15] * 5 and sum(counts) == 75
    plan4 = greedy_schedule(make_instance(4, 4, 1, 1.0, 3), ScheduleConfig(2))
    c = plan4.decode_counts()
    for k in range(4):
        for i in range(2):
            assert len(mac_constraint_set(plan4, k, i)) == 2 ** c[k, i] - 1
    single = plan_from_partition(4, 1, 1.0, [[j] for j in range(6)])
    assert mac_constraint_set(single, 3, 0) == []  # message 0 targets users 0, 1
    d = mac_constraint_set(plan4, 0, 0)
    assert all(x.rate_sum == pytest.approx(len(x.messages) * 1.0 / 4) for x in d)


# -- power bookkeeping ----------------------------------------------------

def test_average_power_examples():
    W = np.zeros((1, 1, 2), dtype=complex)
    W[0, 0] = [1.0, 1.0j]
    assert average_power(W, [1.0]) == pytest.approx(2.0)
    W2 = np.zeros((2, 1, 1), dtype=complex)
    W2[0, 0, 0] = 1.0
    W2[1, 0, 0] = math.sqrt(3.0)
    assert average_power(W2, [0.5, 0.5]) == pytest.approx(2.0)


def test_dbw_roundtrip():
    for p in [1e-6, 0.3, 1.0, 250.0]:
        assert from_dbw(to_dbw(p)) == pytest.approx(p, rel=1e-12)
    assert to_dbw(0.0) == -math.inf


def test_baseline_power_is_slot_average():
    rng = np.random.default_rng(2)
    ch = rayleigh(5, 6, rng)
    plan = baseline_plan(make_instance(5, 5, 1, 2.0, 6), 2)
    sol = sca_solve(plan, ch)
    assert sol.power == pytest.approx(sol.slot_power.sum() / 10, rel=1e-12)
    assert sol.power == pytest.approx(average_power(sol, plan), rel=1e-9)


# -- initializers ---------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_zero_forcing_feasible(seed):
    rng = np.random.default_rng(seed)
    ch = rayleigh(3, 3, rng)
    plan = full_superposition(make_instance(3, 3, 1, 3.0, 3))
    W = zero_forcing_init(plan, ch)
    sol = BeamformingSolution(W, plan.rates.copy(), plan.fractions, average_power(W, plan),
                              np.zeros(1))
    rep = verify_feasibility(sol, plan, ch)
    assert rep.feasible and min(rep.worst.values()) >= -1e-9


def test_zero_forcing_orthogonal_single_users():
    # orthogonal channels: each message hits its own targets only
    H = np.zeros((4, 4), dtype=complex)
    H[np.arange(4), np.arange(4)] = [1.0, 2.0, 0.5, 1.5]
    ch = ChannelRealization(H, np.ones(4))
    plan = greedy_schedule(make_instance(4, 4, 1, 2.0, 4), ScheduleConfig(1))
    W = zero_forcing_init(plan, ch)
    for i, sl in enumerate(plan.slots):
        for j in sl:
            tg = plan.message_targets(j)
            other = [k for k in range(4) if k not in tg]
            assert np.allclose(W[i, j, other], 0, atol=1e-12)


def test_zero_forcing_too_few_antennas():
    rng = np.random.default_rng(0)
    ch = rayleigh(5, 2, rng)
    plan = full_superposition(make_instance(5, 5, 1, 1.0, 2))
    with pytest.raises(InitializationError):
        zero_forcing_init(plan, ch)


def test_single_user_sdr_tight():
    ch, plan, ref = single_user_setup(2.0)
    res = sdr_init(plan, ch, 0, 100, np.random.default_rng(0))
    assert res.rank_one
    assert res.power == pytest.approx(ref, rel=1e-6)
    assert res.lower_bound == pytest.approx(ref, rel=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_sdr_bound_multicast(seed):
    rng = np.random.default_rng(seed)
    ch = rayleigh(3, 4, rng)
    plan = plan_from_partition(3, 2, 3.0, [[0]])  # one message to all three users
    res = sdr_init(plan, ch, 0, 200, np.random.default_rng(seed))
    assert res.power >= res.lower_bound * (1 - 1e-7)
    sol = BeamformingSolution(res.W[None], plan.rates.copy(), plan.fractions, res.power, np.zeros(1))
    assert verify_feasibility(sol, plan, ch).feasible


def test_sdr_zero_rates():
    rng = np.random.default_rng(0)
    ch = rayleigh(3, 3, rng)
    plan = full_superposition(make_instance(3, 3, 1, 1.0, 3))
    res = sdr_init(plan, ch, 0, 10, rates=np.zeros_like(plan.rates))
    assert res.power == 0.0 and not np.any(res.W)


# -- SCA -----------------------------------------------------------------

@pytest.mark.parametrize("R", [0.5, 2.0, 6.0])
def test_sca_single_user_closed_form(R):
    ch, plan, ref = single_user_setup(R)
    sol = sca_solve(plan, ch)
    assert sol.power == pytest.approx(ref, rel=1e-6)
    assert_monotone(sol)


@pytest.mark.parametrize("seed", range(6))
def test_sca_multicast_within_sdr_sandwich(seed):
    rng = np.random.default_rng(100 + seed)
    ch = rayleigh(3, 4, rng)
    plan = plan_from_partition(3, 1, 4.0, [[0], [1], [2]])
    sol = sca_solve(plan, ch, SCAConfig(rel_tol=1e-10))
    sd = sdr_init(plan, ch, 0, 1000, np.random.default_rng(seed))
    assert sd.lower_bound * (1 - 1e-7) <= sol.slot_power[0] <= sd.power * (1 + 1e-7)


def test_sca_zero_rate():
    rng = np.random.default_rng(0)
    ch = rayleigh(4, 4, rng)
    sol = sca_solve(full_superposition(make_instance(4, 4, 1, 0.0, 4)), ch)
    assert sol.power == 0.0 and not np.any(sol.W)


def test_sca_feasible_monotone_and_consistent():
    rng = np.random.default_rng(3)
    ch = rayleigh(5, 6, rng)
    plan = greedy_schedule(make_instance(5, 5, 1, 4.0, 6), ScheduleConfig(2))
    sol = sca_solve(plan, ch)
    assert sol.status == "converged"
    rep = verify_feasibility(sol, plan, ch)
    assert rep.feasible and rep.worst["mac"] >= -1e-6
    assert_monotone(sol)
    assert sol.power == pytest.approx(average_power(sol, plan), rel=1e-9)
    # w = 0 wherever a slot does not carry the message
    v = plan.indicator()
    assert not np.any(sol.W[v.T == 0])
    # SCA improves on its zero-forcing start
    W0 = zero_forcing_init(plan, ch)
    assert sol.power <= average_power(W0, plan) * (1 + 1e-12)


def test_decoupling_equivalent():
    rng = np.random.default_rng(4)
    ch = rayleigh(5, 6, rng)
    plan = greedy_schedule(make_instance(5, 5, 1, 4.0, 6), ScheduleConfig(2))
    a = sca_solve(plan, ch)
    b = sca_solve(plan, ch, SCAConfig(decouple=False))
    assert a.power == pytest.approx(b.power, rel=1e-6)
    assert_monotone(b)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 1000), st.floats(1e-3, 1e3))
def test_scale_covariance(seed, c):
    rng = np.random.default_rng(seed)
    ch = rayleigh(4, 4, rng)
    plan = full_superposition(make_instance(4, 4, 1, 2.0, 4))
    a = sca_solve(plan, ch)
    b = sca_solve(plan, ch.scaled(c))
    assert b.power == pytest.approx(a.power, rel=1e-6)


def test_sdr_init_mode():
    rng = np.random.default_rng(5)
    ch = rayleigh(4, 4, rng)
    plan = greedy_schedule(make_instance(4, 4, 1, 3.0, 4), ScheduleConfig(2))
    a = sca_solve(plan, ch, SCAConfig(init="sdr", randomizations=100))
    b = sca_solve(plan, ch)
    assert verify_feasibility(a, plan, ch).feasible
    assert a.power == pytest.approx(b.power, rel=1e-4)
    assert_monotone(a)


def test_variable_rate_mode():
    rng = np.random.default_rng(6)
    ch = rayleigh(4, 4, rng)
    plan = greedy_schedule(make_instance(4, 4, 1, 3.0, 4), ScheduleConfig(2))
    fixed = sca_solve(plan, ch)
    var = sca_solve(plan, ch, SCAConfig(rate_mode="variable"))
    rep = verify_feasibility(var, plan, ch)
    assert rep.feasible and rep.worst["rate_sum"] >= -1e-6
    # optimizing the rate split can only help from the same start
    assert var.power <= fixed.power * (1 + 1e-6)
    assert_monotone(var)


def test_point_init():
    rng = np.random.default_rng(7)
    ch = rayleigh(4, 4, rng)
    plan = full_superposition(make_instance(4, 4, 1, 2.0, 4))
    W0 = zero_forcing_init(plan, ch)
    a = sca_solve(plan, ch, SCAConfig(init="point"), init_point=W0)
    b = sca_solve(plan, ch)
    assert a.power == pytest.approx(b.power, rel=1e-9)
    with pytest.raises(InitializationError):
        sca_solve(plan, ch, SCAConfig(init="point"), init_point=W0 * 0.5)
    with pytest.raises(InputError):
        sca_solve(plan, ch, SCAConfig(init="point"))


def test_verify_feasibility_cases():
    rng = np.random.default_rng(8)
    ch = rayleigh(4, 4, rng)
    plan = full_superposition(make_instance(4, 4, 1, 2.0, 4))
    zero = BeamformingSolution(np.zeros((1, 6, 4), dtype=complex), plan.rates.copy(),
                               plan.fractions, 0.0, np.zeros(1))
    rep = verify_feasibility(zero, plan, ch)
    assert not rep.feasible
    assert {v[0] for v in rep.violated} == {"mac"}
    assert len(rep.violated) == 4 * 7
    empty = BeamformingSolution(np.zeros((1, 6, 4), dtype=complex), np.zeros((6, 1)),
                                plan.fractions, 0.0, np.zeros(1))
    plan0 = full_superposition(make_instance(4, 4, 1, 0.0, 4))
    assert verify_feasibility(empty, plan0, ch).feasible


def test_config_validation():
    for bad in [dict(step=0.0), dict(step=1.5), dict(rel_tol=0.0), dict(init="x"),
                dict(rate_mode="y"), dict(max_iter=0)]:
        with pytest.raises(InputError):
            SCAConfig(**bad)


def test_channel_validation_and_json():
    with pytest.raises(InputError):
        ChannelRealization(np.zeros((2, 2)), [1, 1])
    with pytest.raises(InputError):
        ChannelRealization(np.ones((2, 2)), [1, 0])
    with pytest.raises(InputError):
        ChannelRealization(np.ones(3), [1])
    rng = np.random.default_rng(9)
    ch = rayleigh(3, 2, rng, noise=0.25)
    back = ChannelRealization.from_json(ch.to_json())
    assert np.array_equal(back.H, ch.H) and np.array_equal(back.noise, ch.noise)


def test_solution_serialization():
    rng = np.random.default_rng(10)
    ch = rayleigh(3, 3, rng)
    plan = full_superposition(make_instance(3, 3, 1, 1.0, 3))
    sol = sca_solve(plan, ch)
    d = json.loads(sol.to_json())
    W = np.asarray(d["re"]) + 1j * np.asarray(d["im"])
    assert np.array_equal(W, sol.W) and d["power"] == sol.power
    lines = sol.trace_csv().splitlines()
    assert lines[0] == "slot,iteration,objective,worst_margin"
    assert len(lines) == len(sol.trace) + 1
