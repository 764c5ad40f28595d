"""Fixed-step simulation of the two-lane hybrid system.

Each Euler step evaluates all accelerations on the current state, then
updates positions and velocities together. The AV follows the linear
feedback of the active gain; HVs follow either the nonlinear OVM or its
linearization around the lane equilibrium.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .controllers import (ControllerSpec, FixedDuration, GainSet, active_gain, build_gains,
                          feedback, switch_decision)
from .gains import GainMatrix, WeightSpec
from .ovm import OvmParams, equilibrium, ovm_coefficients, optimal_velocity
from .state import (HybridState, JumpEvent, LaneState, hybrid_equilibrium, lane_switch, leader_values,
                    pop_variances)

log = logging.getLogger(__name__)

Dynamics = Literal["nonlinear", "linearized"]
A_MIN = -5.0
S_SAFE = 0.5


@dataclass
class Trajectory:
    times: np.ndarray
    states: list[HybridState] = field(repr=False)
    jumps: list[JumpEvent]
    variances: dict = field(repr=False)   # lane -> (samples, 2) array of (var_s, var_v)
    modes: np.ndarray = field(repr=False)
    dt: float = 0.01
    collisions: int = 0
    collision_times: list = field(default_factory=list, repr=False)
    controller: ControllerSpec | None = None
    dynamics: str = "nonlinear"

    def total_variance(self, lane: str) -> np.ndarray:
        return self.variances[lane].sum(axis=1)

    def system_variance(self) -> np.ndarray:
        return self.total_variance("L") + self.total_variance("R")

    def controlled_mask(self, lane: str) -> np.ndarray:
        return self.modes == lane


def emergency_brake_mask(s: np.ndarray, v: np.ndarray, v_lead: np.ndarray) -> np.ndarray:
    """Vehicles whose required deceleration to stop behind the leader reaches |a_min|.

    Gaps at or below the safe distance with a positive closing speed fire too,
    since the literal ratio changes sign there.
    """
    closing = v * v - v_lead * v_lead
    margin = s - S_SAFE
    # closing / (2 margin) >= |a_min| rewritten without division for margin > 0
    fire = (margin > 0) & (closing >= 2.0 * abs(A_MIN) * margin)
    fire |= (margin <= 0) & (closing > 0)
    return fire


def apply_emergency_brake(lane: LaneState, accelerations: np.ndarray) -> np.ndarray:
    s = lane.headways()
    v = lane.velocities
    out = np.array(accelerations, dtype=float)
    fire = emergency_brake_mask(s, v, leader_values(v))
    out[fire] = np.minimum(out[fire], A_MIN)
    return out


class _LaneModel:
    """Per-lane constants cached for the inner loop."""

    def __init__(self, n: int, p: OvmParams, dynamics: Dynamics):
        self.p = p
        self.dynamics = dynamics
        eq = equilibrium(n, p)
        self.s_star, self.v_star = eq.s_star, eq.v_star
        self.a1, self.a2, self.a3 = ovm_coefficients(eq.s_star, p)

    def accelerations(self, s, v, v_lead):
        p = self.p
        if self.dynamics == "nonlinear":
            return p.alpha * (optimal_velocity(s, p) - v) + p.beta * (v_lead - v)
        return (self.a1 * (s - self.s_star) - self.a2 * (v - self.v_star)
                + self.a3 * (v_lead - self.v_star))


def _advance(pos, vel, c, model: _LaneModel, u: float | None, dt: float, brake: bool):
    """One Euler step of a lane; returns (positions, velocities, number of collisions)."""
    s = np.mod(leader_values(pos) - pos, c)
    v_lead = leader_values(vel)
    acc = model.accelerations(s, vel, v_lead)
    if u is not None:
        acc[-1] = u
    if brake:
        fire = emergency_brake_mask(s, vel, v_lead)
        if fire.any():
            # braking never softens a harder deceleration already demanded
            acc[fire] = np.minimum(acc[fire], A_MIN)
    s_new = s + dt * (v_lead - vel)
    new_pos = pos + dt * vel
    new_vel = vel + dt * acc
    if (s_new <= 0.0).any():
        hits = np.flatnonzero(s_new <= 0.0)
        # clamp overtakes to zero gap; sequential so chains resolve front to back
        for i in sorted(hits, key=lambda j: (j - 1) % len(pos)):
            new_pos[i] = new_pos[i - 1]
        return np.mod(new_pos, c), new_vel, int(hits.size)
    return np.mod(new_pos, c), new_vel, 0


def _default_brake(dynamics: Dynamics, brake: bool | None) -> bool:
    return dynamics == "nonlinear" if brake is None else brake


def step_continuous(state: HybridState, dt: float, gain: GainMatrix, dynamics: Dynamics = "nonlinear",
                    p: OvmParams | None = None, emergency_brake: bool | None = None) -> tuple[HybridState, int]:
    """Advance both lanes by one step; returns the new state and the collision count."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = p or OvmParams()
    brake = _default_brake(dynamics, emergency_brake)
    u = feedback(state.controlled, gain)
    new = state.copy()
    total = 0
    for lane in (new.lane_l, new.lane_r):
        model = _LaneModel(lane.n, p, dynamics)
        lane.positions, lane.velocities, k = _advance(
            lane.positions, lane.velocities, p.circumference, model,
            u if lane.av_present else None, dt, brake)
        total += k
    new.time = state.time + dt
    return new, total


@dataclass
class LaneRun:
    """Single-lane simulation result."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    variances: np.ndarray
    collisions: int
    av_present: bool
    circumference: float

    @property
    def total_variance(self) -> np.ndarray:
        return self.variances.sum(axis=1)

    def headways(self) -> np.ndarray:
        return np.mod(np.roll(self.positions, 1, axis=1) - self.positions, self.circumference)


def simulate_lane(lane: LaneState, horizon: float, dt: float = 0.01, p: OvmParams | None = None,
                  gain: GainMatrix | None = None, dynamics: Dynamics = "nonlinear",
                  sample_every: float = 0.1, emergency_brake: bool | None = None) -> LaneRun:
    """Simulate one ring lane (controlled when it carries the AV and a gain is given)."""
    p = p or OvmParams()
    if lane.av_present and gain is None:
        raise ValueError("controlled lane needs a gain")
    brake = _default_brake(dynamics, emergency_brake)
    steps = int(round(horizon / dt))
    stride = max(1, int(round(sample_every / dt)))
    model = _LaneModel(lane.n, p, dynamics)
    pos, vel = lane.positions.copy(), lane.velocities.copy()
    work = lane.copy()
    ts, ps, vs, var = [], [], [], []
    coll = 0
    for k in range(steps + 1):
        if k % stride == 0:
            work.positions, work.velocities = pos, vel
            ts.append(k * dt)
            ps.append(pos.copy())
            vs.append(vel.copy())
            var.append(pop_variances(work))
        if k == steps:
            break
        u = None
        if lane.av_present:
            work.positions, work.velocities = pos, vel
            u = feedback(work, gain)
        pos, vel, c = _advance(pos, vel, p.circumference, model, u, dt, brake)
        coll += c
    return LaneRun(np.array(ts), np.array(ps), np.array(vs), np.array(var), coll,
                   lane.av_present, p.circumference)


def run_trajectory(initial: HybridState, controller: ControllerSpec, horizon: float, dt: float = 0.01,
                   p: OvmParams | None = None, w: WeightSpec | None = None,
                   dynamics: Dynamics = "nonlinear", sample_every: float = 0.1,
                   emergency_brake: bool | None = None, gains: dict | None = None,
                   keep_lanes: bool = False) -> Trajectory:
    """Simulate the hybrid system under a lane-switch policy.

    Guards are evaluated at step boundaries; a switch at a step happens
    before that step's flow, and samples record the post-switch state.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = p or OvmParams()
    w = w or WeightSpec()
    brake = _default_brake(dynamics, emergency_brake)
    gains = dict(gains or {})
    models: dict[int, _LaneModel] = {}

    def gain_set(n: int) -> GainSet:
        if n not in gains:
            gains[n] = build_gains(controller, n, p, w)
        return gains[n]

    def model(n: int) -> _LaneModel:
        if n not in models:
            models[n] = _LaneModel(n, p, dynamics)
        return models[n]

    steps = int(round(horizon / dt))
    stride = max(1, int(round(sample_every / dt)))
    state = initial.copy()
    mode_start = 0
    times, samples, modes = [], [], []
    var = {"L": [], "R": []}
    jumps: list[JumpEvent] = []
    collisions, coll_times = 0, []

    for k in range(steps + 1):
        state.time = k * dt
        elapsed = (k - mode_start) * dt
        if k > 0 and switch_decision(state, controller, elapsed, p):
            state, ev = lane_switch(state, keep_lanes=keep_lanes)
            jumps.append(ev)
            mode_start = k
            elapsed = 0.0
        if k % stride == 0:
            times.append(state.time)
            samples.append(state.copy())
            modes.append(state.mode)
            var["L"].append(pop_variances(state.lane_l))
            var["R"].append(pop_variances(state.lane_r))
        if k == steps:
            break
        ctrl = state.controlled
        u = feedback(ctrl, active_gain(controller, gain_set(ctrl.n), elapsed))
        for lane in (state.lane_l, state.lane_r):
            lane.positions, lane.velocities, c = _advance(
                lane.positions, lane.velocities, p.circumference, model(lane.n),
                u if lane.av_present else None, dt, brake)
            if c:
                collisions += c
                coll_times.append(k * dt)
    if collisions:
        log.warning("%d collision events (first at t=%.2f s)", collisions, coll_times[0])
    return Trajectory(times=np.array(times), states=samples, jumps=jumps,
                      variances={k_: np.array(v_) for k_, v_ in var.items()},
                      modes=np.array(modes), dt=dt, collisions=collisions,
                      collision_times=coll_times, controller=controller, dynamics=dynamics)


def random_initial_state(seed, p: OvmParams | None = None, n: int = 20, w: WeightSpec | None = None,
                         ds: float = 12.0, dv: float = 7.5, max_tries: int = 1000,
                         prefilter: float = 0.1, dt: float = 0.01) -> HybridState:
    """Uniform perturbation of every vehicle around its lane equilibrium.

    Draws that break the vehicle ordering or collide within ``prefilter``
    seconds of controlled simulation are rejected and redrawn.
    """
    p = p or OvmParams()
    w = w or WeightSpec()
    rng = np.random.default_rng(seed)
    base = hybrid_equilibrium(p, n)
    probe = FixedDuration(T=1e9)
    for _ in range(max_tries):
        st = base.copy()
        ok = True
        for lane in (st.lane_l, st.lane_r):
            eq = equilibrium(lane.n, p)
            d_s = rng.uniform(-ds, ds, lane.n)
            d_v = rng.uniform(-dv, dv, lane.n)
            gaps = eq.s_star + np.roll(d_s, 1) - d_s
            if np.any(gaps <= 0):
                ok = False
            lane.positions = np.mod(lane.positions + d_s, p.circumference)
            lane.velocities = lane.velocities + d_v
        if not ok:
            continue
        if prefilter > 0:
            tr = run_trajectory(st, probe, prefilter, dt=dt, p=p, w=w, sample_every=prefilter)
            if tr.collisions:
                continue
        return st
    raise RuntimeError(f"no collision-free initial state after {max_tries} draws")


def random_lane(seed, p: OvmParams | None = None, n: int = 20, with_av: bool = False,
                ds: float = 12.0, dv: float = 7.5, max_tries: int = 1000) -> LaneState:
    """Single perturbed lane with ordering preserved (no dynamics prefilter)."""
    from .state import equilibrium_lane
    p = p or OvmParams()
    rng = np.random.default_rng(seed)
    eq = equilibrium(n, p)
    for _ in range(max_tries):
        d_s = rng.uniform(-ds, ds, n)
        d_v = rng.uniform(-dv, dv, n)
        if np.all(eq.s_star + np.roll(d_s, 1) - d_s > 0):
            lane = equilibrium_lane(n, p, with_av=with_av)
            return LaneState(lane.positions + d_s, lane.velocities + d_v, lane.ids,
                             p.circumference, with_av)
    raise RuntimeError("could not draw an ordered lane")
