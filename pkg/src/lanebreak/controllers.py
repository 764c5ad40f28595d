"""Lane-switch policies and the AV's in-lane feedback law."""
from __future__ import annotations

import functools
from dataclasses import dataclass, asdict
from typing import Union

import numpy as np

from .gains import GainMatrix, WeightSpec, synthesize_gain
from .ovm import Equilibrium, OvmParams, equilibrium, linearize, optimal_velocity
from .state import HybridState, LaneState, entry_gaps

# guard comparisons happen on float clocks built from integer step counts
TIME_TOL = 1e-9


@dataclass(frozen=True)
class FixedDuration:
    T: float = 30.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")


@dataclass(frozen=True)
class Anticipatory:
    """Switch every T; during the tail [p_ex T, T] regulate towards a shorter AV headway.

    ``s_hat_av`` is the anticipatory AV headway in metres; when None it is
    ``s_hat_frac`` times the controlled-lane equilibrium headway.
    """

    T: float = 30.0
    p_ex: float = 0.5
    s_hat_av: float | None = None
    s_hat_frac: float = 0.5

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0 <= self.p_ex <= 1:
            raise ValueError("p_ex must lie in [0, 1]")
        if not 0 <= self.s_hat_frac <= 1:
            raise ValueError("s_hat_frac must lie in [0, 1]")
        if self.s_hat_av is not None and self.s_hat_av < 0:
            raise ValueError("s_hat_av must be nonnegative")

    def anticipatory_headway(self, n: int, p: OvmParams) -> float:
        s_star = p.circumference / n
        s_hat = self.s_hat_frac * s_star if self.s_hat_av is None else self.s_hat_av
        if s_hat > s_star + 1e-12:
            raise ValueError("s_hat_av must not exceed the equilibrium headway")
        return s_hat


@dataclass(frozen=True)
class TrafficAware:
    """Entry window [T - dT, T + dT] gated on the prospective gaps and speed match."""

    base: FixedDuration | Anticipatory = FixedDuration()
    dT: float | None = None
    p_en_s: float = 0.2
    p_en_v: float = 0.8

    def __post_init__(self):
        if isinstance(self.base, TrafficAware):
            raise ValueError("base must be FixedDuration or Anticipatory")
        if not (0 <= self.window < self.T):
            raise ValueError("dT must lie in [0, T)")
        if not (0 <= self.p_en_s <= 1 and 0 <= self.p_en_v <= 1):
            raise ValueError("p_en_s and p_en_v must lie in [0, 1]")

    @property
    def T(self) -> float:
        return self.base.T

    @property
    def window(self) -> float:
        return 0.1 * self.T if self.dT is None else self.dT


ControllerSpec = Union[FixedDuration, Anticipatory, TrafficAware]


def base_of(spec: ControllerSpec) -> FixedDuration | Anticipatory:
    return spec.base if isinstance(spec, TrafficAware) else spec


def spec_to_dict(spec: ControllerSpec) -> dict:
    if isinstance(spec, TrafficAware):
        d = {"variant": "traffic_aware", "dT": spec.dT, "p_en_s": spec.p_en_s, "p_en_v": spec.p_en_v}
        d["base"] = spec_to_dict(spec.base)
        return d
    name = "fixed_duration" if isinstance(spec, FixedDuration) else "anticipatory"
    return {"variant": name, **asdict(spec)}


def spec_from_dict(d: dict) -> ControllerSpec:
    d = dict(d)
    variant = d.pop("variant", "fixed_duration")
    if variant == "fixed_duration":
        return FixedDuration(**d)
    if variant == "anticipatory":
        return Anticipatory(**d)
    if variant == "traffic_aware":
        base = spec_from_dict(d.pop("base", {"variant": "fixed_duration"}))
        return TrafficAware(base=base, **d)
    raise ValueError(f"unknown controller variant {variant!r}")


@dataclass(frozen=True)
class AnticipatoryEquilibrium:
    s_hat_hv: float
    s_hat_av: float
    v_hat: float
    gain_hat: GainMatrix


@dataclass(frozen=True)
class GainSet:
    standard: GainMatrix
    anticipatory: AnticipatoryEquilibrium | None = None


@functools.lru_cache(maxsize=64)
def standard_gain(n: int, p: OvmParams, w: WeightSpec) -> GainMatrix:
    eq = equilibrium(n, p)
    return synthesize_gain(linearize(n, "controlled", p), w, eq=eq)


@functools.lru_cache(maxsize=64)
def anticipatory_equilibrium(n: int, s_hat_av: float, p: OvmParams, w: WeightSpec) -> AnticipatoryEquilibrium:
    """Higher-speed equilibrium with AV headway ``s_hat_av`` and its regulating gain."""
    if not 0 <= s_hat_av <= p.circumference / n + 1e-12:
        raise ValueError("s_hat_av must lie in [0, C/n]")
    s_hv = (p.circumference - s_hat_av) / (n - 1)
    if not p.s_st < s_hv < p.s_go:
        raise ValueError("anticipatory HV headway lies outside the sloped part of V")
    v_hat = optimal_velocity(s_hv, p)
    target = np.tile([s_hv, v_hat], n)
    target[-2] = s_hat_av
    sys = linearize(n, "controlled", p, s_star=s_hv)
    k_hat = synthesize_gain(sys, w, eq=Equilibrium(n=n, s_star=s_hv, v_star=v_hat), target=target)
    return AnticipatoryEquilibrium(s_hat_hv=s_hv, s_hat_av=s_hat_av, v_hat=v_hat, gain_hat=k_hat)


def build_gains(spec: ControllerSpec, n: int, p: OvmParams, w: WeightSpec) -> GainSet:
    base = base_of(spec)
    ant = None
    if isinstance(base, Anticipatory):
        ant = anticipatory_equilibrium(n, base.anticipatory_headway(n, p), p, w)
    return GainSet(standard=standard_gain(n, p, w), anticipatory=ant)


def in_anticipatory_phase(spec: ControllerSpec, elapsed: float) -> bool:
    base = base_of(spec)
    return isinstance(base, Anticipatory) and elapsed >= base.p_ex * base.T - TIME_TOL


def active_gain(spec: ControllerSpec, gains: GainSet, elapsed: float) -> GainMatrix:
    if in_anticipatory_phase(spec, elapsed):
        if gains.anticipatory is None:
            raise ValueError("anticipatory gain missing from gain set")
        return gains.anticipatory.gain_hat
    return gains.standard


def feedback(lane: LaneState, gain: GainMatrix) -> float:
    if lane.n != gain.n:
        raise ValueError(f"gain built for {gain.n} vehicles, lane has {lane.n}")
    return float(-(gain.k @ (lane.state_vector() - gain.target))[0])


def control_input(state: HybridState, spec: ControllerSpec, gains: GainSet, elapsed: float = 0.0) -> float:
    return feedback(state.controlled, active_gain(spec, gains, elapsed))


def entry_criteria(state: HybridState, spec: TrafficAware, p: OvmParams) -> bool:
    """Both prospective gaps wide enough and the AV speed close to the enter-lane mean."""
    ctrl, target = state.controlled, state.uncontrolled
    a, b, _ = entry_gaps(target, float(ctrl.positions[-1]))
    s_ref = p.circumference / target.n
    v_ref = equilibrium(target.n + 1, p).v_star
    gaps_ok = a >= spec.p_en_s * s_ref and b >= spec.p_en_s * s_ref
    speed_ok = abs(ctrl.velocities[-1] - target.velocities.mean()) <= spec.p_en_v * v_ref
    return bool(gaps_ok and speed_ok)


def switch_decision(state: HybridState, spec: ControllerSpec, elapsed: float, p: OvmParams | None = None) -> bool:
    if not isinstance(spec, TrafficAware):
        return elapsed >= spec.T - TIME_TOL
    if elapsed >= spec.T + spec.window - TIME_TOL:
        return True
    if elapsed < spec.T - spec.window - TIME_TOL:
        return False
    return entry_criteria(state, spec, p or OvmParams())
