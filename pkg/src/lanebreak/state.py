"""Lane and hybrid-system states, the lane-switch reset map and canonical initial states.

Vehicle order inside a lane follows the car-following chain: index 0 is
vehicle 1, vehicle i follows vehicle i-1, and vehicle 1 follows the last
vehicle. In a controlled lane the AV always occupies the last slot.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .ovm import OvmParams, equilibrium

AV_ID = 0
Mode = Literal["L", "R"]


@dataclass
class LaneState:
    positions: np.ndarray
    velocities: np.ndarray
    ids: np.ndarray
    circumference: float
    av_present: bool = False

    def __post_init__(self):
        self.positions = np.mod(np.asarray(self.positions, dtype=float), self.circumference)
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.ids = np.asarray(self.ids, dtype=int)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def av_slot(self) -> int | None:
        return self.n - 1 if self.av_present else None

    def headways(self) -> np.ndarray:
        return lane_headways(self.positions, self.circumference)

    def state_vector(self) -> np.ndarray:
        """Interleaved [s_1, v_1, ..., s_n, v_n]."""
        return interleave(self.headways(), self.velocities)

    def copy(self) -> "LaneState":
        return LaneState(self.positions.copy(), self.velocities.copy(), self.ids.copy(),
                         self.circumference, self.av_present)

    def same_as(self, other: "LaneState") -> bool:
        return (self.av_present == other.av_present
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.velocities, other.velocities))


@dataclass
class HybridState:
    lane_l: LaneState
    lane_r: LaneState
    mode: Mode = "L"
    time: float = 0.0
    switch_count: int = 0

    def __post_init__(self):
        if self.lane_l.av_present == self.lane_r.av_present:
            raise ValueError("exactly one lane must carry the AV")
        if self.controlled_name != self.mode:
            raise ValueError("mode does not match AV lane")

    @property
    def controlled_name(self) -> Mode:
        return "L" if self.lane_l.av_present else "R"

    @property
    def controlled(self) -> LaneState:
        return self.lane_l if self.mode == "L" else self.lane_r

    @property
    def uncontrolled(self) -> LaneState:
        return self.lane_r if self.mode == "L" else self.lane_l

    @property
    def round_index(self) -> int:
        return self.switch_count // 2

    def lane(self, name: Mode) -> LaneState:
        return self.lane_l if name == "L" else self.lane_r

    def copy(self) -> "HybridState":
        return replace(self, lane_l=self.lane_l.copy(), lane_r=self.lane_r.copy())


@dataclass
class JumpEvent:
    time: float
    direction: str
    exit_headways: tuple[float, float, float]
    enter_headways: tuple[float, float]
    av_velocity: float
    exit_var_pre: tuple[float, float]
    exit_var_post: tuple[float, float]
    enter_var_pre: tuple[float, float]
    enter_var_post: tuple[float, float]
    degenerate: bool = False
    exit_lane_pre: LaneState | None = field(default=None, repr=False)
    enter_lane_pre: LaneState | None = field(default=None, repr=False)

    @property
    def exit_lane(self) -> Mode:
        return self.direction[0]

    @property
    def enter_lane(self) -> Mode:
        return self.direction[-1]

    @property
    def delta_exit(self) -> float:
        return sum(self.exit_var_post) - sum(self.exit_var_pre)

    @property
    def delta_enter(self) -> float:
        return sum(self.enter_var_post) - sum(self.enter_var_pre)

    def to_json(self) -> dict:
        return {
            "time": self.time,
            "direction": self.direction,
            "exit_headways": list(self.exit_headways),
            "enter_headways": list(self.enter_headways),
            "av_velocity": self.av_velocity,
            "exit_var_pre": list(self.exit_var_pre),
            "exit_var_post": list(self.exit_var_post),
            "enter_var_pre": list(self.enter_var_pre),
            "enter_var_post": list(self.enter_var_post),
            "delta_exit": self.delta_exit,
            "delta_enter": self.delta_enter,
            "degenerate": self.degenerate,
        }


def leader_values(x: np.ndarray) -> np.ndarray:
    """x of each vehicle's leader (cheaper than np.roll(x, 1) in hot loops)."""
    return np.concatenate((x[-1:], x[:-1]))


def lane_headways(positions: np.ndarray, circumference: float) -> np.ndarray:
    return np.mod(leader_values(positions) - positions, circumference)


def interleave(s: np.ndarray, v: np.ndarray) -> np.ndarray:
    z = np.empty(2 * len(s))
    z[0::2] = s
    z[1::2] = v
    return z


def pop_variances(lane: LaneState) -> tuple[float, float]:
    """Population variances (headway, velocity) of all vehicles on a lane."""
    return float(np.var(lane.headways())), float(np.var(lane.velocities))


def canonical(lane: LaneState) -> LaneState:
    """Rotate an AV-free lane so the smallest vehicle id sits in slot 0."""
    if lane.av_present or lane.n == 0:
        return lane
    k = int(np.argmin(lane.ids))
    return LaneState(np.roll(lane.positions, -k), np.roll(lane.velocities, -k),
                     np.roll(lane.ids, -k), lane.circumference, False)


def insertion_leader(positions: np.ndarray, av_position: float, circumference: float) -> int:
    """Index of the enter-lane vehicle the AV will follow (distance ahead >= 0 minimal)."""
    ahead = np.mod(positions - av_position, circumference)
    return int(np.argmin(ahead))


def entry_gaps(lane: LaneState, av_position: float) -> tuple[float, float, int]:
    """Prospective (a, b, leader index) if the AV entered ``lane`` at ``av_position``.

    ``a`` is the AV headway to its new leader, ``b`` the headway of the HV
    that would follow the AV.
    """
    c = lane.circumference
    lead = insertion_leader(lane.positions, av_position, c)
    follower = (lead + 1) % lane.n
    a = float(np.mod(lane.positions[lead] - av_position, c))
    b = float(np.mod(av_position - lane.positions[follower], c))
    return a, b, lead


def remove_av(lane: LaneState) -> LaneState:
    if not lane.av_present:
        raise ValueError("lane has no AV to remove")
    out = LaneState(lane.positions[:-1].copy(), lane.velocities[:-1].copy(), lane.ids[:-1].copy(),
                    lane.circumference, False)
    return canonical(out)


def insert_av(lane: LaneState, av_position: float, av_velocity: float) -> tuple[LaneState, bool]:
    """Insert the AV and rotate indices so it is last (returns lane, degenerate flag)."""
    if lane.av_present:
        raise ValueError("lane already has the AV")
    lead = insertion_leader(lane.positions, av_position, lane.circumference)
    degenerate = bool(np.any(lane.positions == np.mod(av_position, lane.circumference)))
    k = (lead + 1) % lane.n
    order = np.r_[np.arange(k, lane.n), np.arange(0, k)]
    pos = np.r_[lane.positions[order], av_position]
    vel = np.r_[lane.velocities[order], av_velocity]
    ids = np.r_[lane.ids[order], AV_ID]
    return LaneState(pos, vel, ids, lane.circumference, True), degenerate


def lane_switch(state: HybridState, keep_lanes: bool = False) -> tuple[HybridState, JumpEvent]:
    """Discrete reset map: the AV moves to the other lane at identical position and speed."""
    exit_name = state.mode
    enter_name: Mode = "R" if exit_name == "L" else "L"
    exit_lane = state.lane(exit_name)
    enter_lane = state.lane(enter_name)
    if not exit_lane.av_present or enter_lane.av_present:
        raise ValueError("AV must be present on exactly the exit lane")

    p_av = float(exit_lane.positions[-1])
    v_av = float(exit_lane.velocities[-1])
    s_exit = exit_lane.headways()
    a_exit, b_exit = float(s_exit[-1]), float(s_exit[0])

    new_exit = remove_av(exit_lane)
    new_enter, degenerate = insert_av(enter_lane, p_av, v_av)
    s_enter = new_enter.headways()

    ev = JumpEvent(
        time=state.time,
        direction=f"{exit_name}->{enter_name}",
        exit_headways=(a_exit, b_exit, a_exit + b_exit),
        enter_headways=(float(s_enter[-1]), float(s_enter[0])),
        av_velocity=v_av,
        exit_var_pre=pop_variances(exit_lane),
        exit_var_post=pop_variances(new_exit),
        enter_var_pre=pop_variances(enter_lane),
        enter_var_post=pop_variances(new_enter),
        degenerate=degenerate,
        exit_lane_pre=exit_lane.copy() if keep_lanes else None,
        enter_lane_pre=enter_lane.copy() if keep_lanes else None,
    )
    lanes = {exit_name: new_exit, enter_name: new_enter}
    new = HybridState(lane_l=lanes["L"], lane_r=lanes["R"], mode=enter_name,
                      time=state.time, switch_count=state.switch_count + 1)
    return new, ev


def equilibrium_lane(m: int, p: OvmParams, offset: float = 0.0, with_av: bool = False) -> LaneState:
    """Uniform lane with ``m`` vehicles; vehicle 1 sits at ``offset`` - s*, the last at ``offset`` - m s*."""
    eq = equilibrium(m, p)
    pos = offset - eq.s_star * np.arange(1, m + 1)
    vel = np.full(m, eq.v_star)
    ids = np.arange(1, m + 1)
    if with_av:
        ids[-1] = AV_ID
    return LaneState(pos, vel, ids, p.circumference, with_av)


def nominal_initial_states(p: OvmParams, n: int = 20,
                           av_velocity: float | None = None) -> tuple[LaneState, LaneState]:
    """Fixed initial lanes right after the AV enters / exits a lane at equilibrium.

    controlled: AV inserted mid-gap into an (n-1)-vehicle equilibrium lane,
    moving at ``av_velocity`` (default v*_n, i.e. arriving from a stabilized lane).
    uncontrolled: an n-vehicle equilibrium lane with the AV just removed.
    """
    if n < 3:
        raise ValueError("need n >= 3")
    if av_velocity is None:
        av_velocity = equilibrium(n, p).v_star
    base = equilibrium_lane(n - 1, p)
    gap = p.circumference / (n - 1)
    ctrl, _ = insert_av(base, float(base.positions[-1]) + 0.5 * gap, av_velocity)
    unctrl = remove_av(equilibrium_lane(n, p, with_av=True))
    return ctrl, unctrl


def hybrid_equilibrium(p: OvmParams, n: int = 20) -> HybridState:
    """Both lanes at their equilibria; the AV on lane L sits mid-gap of lane R."""
    lane_l = equilibrium_lane(n, p, with_av=True)
    gap = p.circumference / (n - 1)
    lane_r = equilibrium_lane(n - 1, p, offset=0.5 * gap)
    return HybridState(lane_l=lane_l, lane_r=lane_r, mode="L")
