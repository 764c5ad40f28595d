import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanebreak.analysis import detect_periodic_orbit, spectral_lipschitz, state_dependent_tube
from lanebreak.controllers import FixedDuration, GainSet, control_input, standard_gain
from lanebreak.gains import WeightSpec
from lanebreak.ovm import OvmParams, equilibrium, linearize
from lanebreak.sim import (A_MIN, emergency_brake_mask, random_initial_state, random_lane, run_trajectory,
                           simulate_lane, step_continuous)
from lanebreak.state import equilibrium_lane, hybrid_equilibrium, interleave

import oracles

P = OvmParams()
W = WeightSpec()


def _perturbed_lane(m, seed, amp):
    rng = np.random.default_rng(seed)
    lane = equilibrium_lane(m, P)
    lane.positions = np.mod(lane.positions + amp * rng.uniform(-1, 1, m), P.circumference)
    lane.velocities = lane.velocities + amp * rng.uniform(-1, 1, m)
    return lane


def _error(run, k, m):
    eq = equilibrium(m, P)
    return interleave(run.headways()[k] - eq.s_star, run.velocities[k] - eq.v_star)


def test_linearized_matches_matrix_exponential_first_order():
    m, horizon = 19, 5.0
    lane = _perturbed_lane(m, 0, 0.5)
    x0 = interleave(lane.headways() - P.circumference / m, lane.velocities - equilibrium(m, P).v_star)
    exact = oracles.linear_flow(oracles.uncontrolled_matrix(m), x0, horizon)
    errs = []
    for dt in (0.01, 0.001):
        run = simulate_lane(lane, horizon, dt=dt, dynamics="linearized", sample_every=horizon)
        errs.append(np.abs(_error(run, -1, m) - exact).max())
    ratio = errs[0] / errs[1]
    assert 8 < ratio < 12, errs  # Richardson: error shrinks with dt to first order


def test_emergency_brake_mask_cases():
    s = np.array([30.0, 2.0, 0.3, 0.3, 10.0])
    v = np.array([10.0, 10.0, 5.0, 5.0, 12.0])
    v_lead = np.array([10.0, 5.0, 8.0, 4.0, 10.0])
    fire = emergency_brake_mask(s, v, v_lead)
    # needed deceleration (v^2 - v_lead^2) / (2 (s - 0.5)) against |a_min| = 5
    np.testing.assert_array_equal(fire, [False, True, False, True, False])


def test_brake_never_softens_deceleration():
    state = hybrid_equilibrium(P, 20)
    lane = state.lane_r
    lane.positions[1] = lane.positions[0] - 0.6  # vehicle 2 right behind vehicle 1
    lane.velocities[1] = lane.velocities[0] + 8.0
    g = standard_gain(20, P, W)
    nxt, _ = step_continuous(state, 0.01, g, p=P)
    acc = (nxt.lane_r.velocities[1] - lane.velocities[1]) / 0.01
    assert acc <= A_MIN + 1e-9


def test_collision_counted_and_clamped():
    lane = equilibrium_lane(5, P)
    lane.positions[1] = lane.positions[0] - 0.01
    lane.velocities[1] = lane.velocities[0] + 20.0
    run = simulate_lane(lane, 0.02, dt=0.01, emergency_brake=False, sample_every=0.01)
    assert run.collisions >= 1
    assert np.all(run.headways() >= 0)


@given(st.integers(0, 2**16))
@settings(max_examples=10)
def test_headway_sum_conserved_along_trajectory(seed):
    st0 = random_initial_state(seed, P, prefilter=0.0)
    tr = run_trajectory(st0, FixedDuration(T=1.0), 4.0, p=P, sample_every=0.5)
    for s in tr.states:
        for lane in (s.lane_l, s.lane_r):
            assert abs(lane.headways().sum() - P.circumference) <= 1e-9 * P.circumference
        assert s.controlled.n == 20 and s.uncontrolled.n == 19
        assert s.lane(s.mode).av_present


def test_fixed_duration_switch_times_arithmetic():
    tr = run_trajectory(hybrid_equilibrium(P), FixedDuration(T=2.5), 20.0, p=P)
    t = np.array([j.time for j in tr.jumps])
    np.testing.assert_allclose(t, 2.5 * np.arange(1, len(t) + 1), atol=tr.dt)
    assert len(t) == 8


def test_modes_match_jumps():
    tr = run_trajectory(random_initial_state(1, P), FixedDuration(T=3.0), 12.0, p=P)
    changes = np.flatnonzero(tr.modes[1:] != tr.modes[:-1]) + 1
    assert len(changes) == len(tr.jumps)
    np.testing.assert_allclose(tr.times[changes], [j.time for j in tr.jumps], atol=0.1 + 1e-9)
    assert np.all(np.diff(tr.times) > 0)


def test_equilibrium_zero_input_and_2T_periodic_orbit():
    st0 = hybrid_equilibrium(P)
    g = standard_gain(20, P, W)
    assert abs(control_input(st0, FixedDuration(), GainSet(g))) < 1e-12
    T = 2.0
    tr = run_trajectory(st0, FixedDuration(T=T), 300.0, p=P)
    orbit = detect_periodic_orbit(tr, T)
    assert orbit.converged
    i, j = len(tr.times) - 1, len(tr.times) - 1 - int(round(2 * T / 0.1))
    assert tr.modes[i] == tr.modes[j]
    np.testing.assert_allclose(tr.states[i].lane_l.velocities, tr.states[j].lane_l.velocities, atol=orbit.threshold)


def test_deterministic_per_seed():
    a = random_initial_state(7, P)
    b = random_initial_state(7, P)
    assert a.lane_l.same_as(b.lane_l) and a.lane_r.same_as(b.lane_r)
    ta = run_trajectory(a, FixedDuration(T=2.0), 5.0, p=P)
    tb = run_trajectory(b, FixedDuration(T=2.0), 5.0, p=P)
    np.testing.assert_array_equal(ta.system_variance(), tb.system_variance())


def test_random_state_perturbation_ranges():
    st0 = random_initial_state(3, P, prefilter=0.0)
    eq = equilibrium(20, P)
    assert np.all(np.abs(st0.lane_l.velocities - eq.v_star) <= 7.5)


def test_tube_never_violated_by_linearized_pairs():
    m = 19
    a = linearize(m, "uncontrolled", P).a_matrix
    lip = spectral_lipschitz(a)
    base = _perturbed_lane(m, 1, 1.0)
    other = _perturbed_lane(m, 2, 1.0)
    r1 = simulate_lane(base, 3.0, dynamics="linearized", sample_every=0.5)
    r2 = simulate_lane(other, 3.0, dynamics="linearized", sample_every=0.5)
    x0, y0 = _error(r1, 0, m), _error(r2, 0, m)
    for k, t in enumerate(r1.times):
        gap, var_gap = state_dependent_tube(x0, y0, lip, t, n_l=m)
        x, y = _error(r1, k, m), _error(r2, k, m)
        assert np.linalg.norm(x - y) <= gap + 1e-9
        assert abs(r1.total_variance[k] - r2.total_variance[k]) <= var_gap + 1e-9


def test_controlled_lane_needs_gain():
    with pytest.raises(ValueError):
        simulate_lane(random_lane(0, P, 20, with_av=True), 1.0)


def test_rejects_bad_steps():
    with pytest.raises(ValueError):
        run_trajectory(hybrid_equilibrium(P), FixedDuration(), 0.0)
    with pytest.raises(ValueError):
        run_trajectory(hybrid_equilibrium(P), FixedDuration(), 1.0, dt=0)
