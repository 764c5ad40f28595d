"""Variance metric, jump closed forms, envelopes, rounds, orbits and regimes."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .ovm import Equilibrium
from .state import HybridState, LaneState, insertion_leader, interleave


# ---------------------------------------------------------------- metric

@dataclass(frozen=True)
class VarianceSample:
    time: float
    lane: str
    var_s: float
    var_v: float
    controlled: bool

    @property
    def var_total(self) -> float:
        return self.var_s + self.var_v


def lane_variance(lane: LaneState, time: float = 0.0, name: str = "L") -> VarianceSample:
    if lane.n < 2:
        raise ValueError("variance needs at least two vehicles")
    s = lane.headways()
    return VarianceSample(time, name, float(np.var(s)), float(np.var(lane.velocities)), lane.av_present)


def system_variance(state: HybridState) -> float:
    return lane_variance(state.lane_l).var_total + lane_variance(state.lane_r).var_total


def error_state(lane: LaneState, eq: Equilibrium) -> np.ndarray:
    return lane.state_vector() - np.tile([eq.s_star, eq.v_star], lane.n)


def variance_norm_ratio(lane: LaneState, eq: Equilibrium) -> float | None:
    """var / ||z - z*||^2, or None at the equilibrium itself."""
    x = error_state(lane, eq)
    nrm = float(x @ x)
    if nrm == 0.0:
        return None
    return lane_variance(lane).var_total / nrm


def assumption1_check(lane: LaneState, eq: Equilibrium) -> bool:
    v = lane.velocities
    if np.all(v == eq.v_star):
        return True
    return bool(np.any(v < eq.v_star) and np.any(v >= eq.v_star))


# ---------------------------------------------------------- jump closed forms

def jump_delta_exit(lane: LaneState) -> tuple[float, float]:
    """Variance change (headway, velocity) of a lane when the AV leaves it."""
    if not lane.av_present:
        raise ValueError("AV must be on the lane")
    n, c = lane.n, lane.circumference
    s, v = lane.headways(), lane.velocities
    a, b = s[-1], s[0]
    d_s = np.var(s) / (n - 1) + 2 * a * b / (n - 1) - c**2 / ((n - 1) ** 2 * n)
    d_v = np.var(v) / (n - 1) - (-(n - 1) * v[-1] + v[:-1].sum()) ** 2 / ((n - 1) ** 2 * n)
    return float(d_s), float(d_v)


def jump_delta_enter(lane: LaneState, av_position: float, av_velocity: float) -> tuple[float, float]:
    """Variance change (headway, velocity) of a lane when the AV enters it at ``av_position``."""
    if lane.av_present:
        raise ValueError("lane already carries the AV")
    n, c = lane.n, lane.circumference
    s, v = lane.headways(), lane.velocities
    lead = insertion_leader(lane.positions, av_position, c)
    follower = (lead + 1) % n
    a = np.mod(lane.positions[lead] - av_position, c)
    b = np.mod(av_position - lane.positions[follower], c)
    d_s = -np.var(s) / (n + 1) - 2 * a * b / (n + 1) + c**2 / ((n + 1) ** 2 * n)
    d_v = -np.var(v) / (n + 1) + (-n * av_velocity + v.sum()) ** 2 / ((n + 1) ** 2 * n)
    return float(d_s), float(d_v)


# ---------------------------------------------------------------- envelopes

@dataclass
class BoundParams:
    alpha1: float = 1.0
    alpha2: float = 0.2319
    beta1: float = 1.0
    beta_dec: float = 0.3115
    beta2: float = 0.03313
    t_eps: float = 3.5
    eps: float = 0.5
    nominal_times: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    nominal_var_u: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    insufficient_factor: float = 0.25

    def __post_init__(self):
        self.nominal_times = np.asarray(self.nominal_times, float)
        self.nominal_var_u = np.asarray(self.nominal_var_u, float)
        if min(self.alpha2, self.t_eps) <= 0 or self.beta2 <= 0:
            raise ValueError("alpha2, beta2 and t_eps must be positive")

    def nominal_at(self, t: float) -> float:
        if self.nominal_times.size == 0:
            raise ValueError("no tabulated nominal curve stored")
        return float(np.interp(t, self.nominal_times, self.nominal_var_u))

    def slowed(self) -> "BoundParams":
        """Controlled rate scaled down for the short-duration regime."""
        d = self.to_json()
        d["alpha2"] = self.alpha2 * self.insufficient_factor
        return BoundParams.from_json(d)

    def to_json(self) -> dict:
        d = asdict(self)
        d["nominal_times"] = [float(x) for x in self.nominal_times]
        d["nominal_var_u"] = [float(x) for x in self.nominal_var_u]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "BoundParams":
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "BoundParams":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _rate_through_origin(t: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of y = r t (log-variance ratio with unit multiplier)."""
    den = float(t @ t)
    return float(t @ y) / den if den > 0 else 0.0


def fit_envelopes(controlled: tuple[np.ndarray, np.ndarray], uncontrolled: tuple[np.ndarray, np.ndarray],
                  floor: float = 1e-3, saturation_fraction: float = 0.5, eps: float = 0.5) -> BoundParams:
    """Fit exponential envelopes to nominal controlled / uncontrolled variance traces.

    Multipliers are fixed to 1 so every branch is a line through the origin in
    log space. The controlled rate uses samples until the variance first
    drops below ``floor`` times its start. The uncontrolled trace is split at
    its minimum t_eps: a decay rate is fitted before it and a growth rate
    after it, up to the first time the variance reaches
    ``saturation_fraction`` of its maximum (before nonlinear saturation).
    """
    tc, vc = (np.asarray(x, float) for x in controlled)
    tu, vu = (np.asarray(x, float) for x in uncontrolled)
    if vc[0] <= 0 or vu[0] <= 0:
        raise ValueError("traces must start with positive variance")

    below = np.flatnonzero(vc < floor * vc[0])
    end_c = below[0] if below.size else len(vc)
    mc = slice(0, end_c)
    if np.any(np.diff(vc[mc]) > 0):
        warnings.warn("controlled variance trace is not monotone on the fit window")
    alpha2 = -_rate_through_origin(tc[mc] - tc[0], np.log(vc[mc] / vc[0]))

    i_min = int(np.argmin(vu))
    t_eps = float(tu[i_min] - tu[0])
    md = slice(0, i_min + 1)
    beta_dec = -_rate_through_origin(tu[md] - tu[0], np.log(vu[md] / vu[0]))
    top = np.flatnonzero((tu > tu[i_min]) & (vu >= saturation_fraction * vu.max()))
    end_g = top[0] + 1 if top.size else len(vu)
    mg = slice(i_min, end_g)
    beta2 = _rate_through_origin(tu[mg] - tu[i_min], np.log(vu[mg] / vu[i_min]))
    if beta2 <= 0:
        warnings.warn("uncontrolled trace shows no growth after its minimum")
        beta2 = np.finfo(float).eps
    return BoundParams(alpha2=alpha2, beta_dec=beta_dec, beta2=beta2, t_eps=t_eps, eps=eps,
                       nominal_times=tu - tu[0], nominal_var_u=vu)


def f_controlled(params: BoundParams, var0: float, t: float) -> float:
    return params.alpha1 * np.exp(-params.alpha2 * t) * var0


def f_uncontrolled(params: BoundParams, var0: float, t: float, state_dependent: bool = False) -> float:
    if state_dependent:
        if t <= params.t_eps:
            return params.nominal_at(t) + params.eps
        return (params.nominal_at(params.t_eps) + params.eps) * np.exp(params.beta2 * (t - params.t_eps))
    if t <= params.t_eps:
        return params.beta1 * np.exp(-params.beta_dec * t) * var0
    return params.beta1 * np.exp(-params.beta_dec * params.t_eps + params.beta2 * (t - params.t_eps)) * var0


def round_bound(params: BoundParams, var_start: float, jump_enter: float, jump_exit: float,
                t_controlled: float, t_uncontrolled: float,
                use_state_dependent: bool = False) -> tuple[float, float]:
    """Upper bounds on the variance after the controlled period and after the whole round."""
    if min(var_start, t_controlled, t_uncontrolled) < 0:
        raise ValueError("inputs must be nonnegative")
    v1 = f_controlled(params, max(var_start + jump_enter, 0.0), t_controlled)
    v2 = f_uncontrolled(params, max(v1 + jump_exit, 0.0), t_uncontrolled, use_state_dependent)
    return float(v1), float(v2)


def state_dependent_tube(z0: np.ndarray, z0_bar: np.ndarray, lipschitz: float, t: float,
                         n_l: int | None = None) -> tuple[float, float]:
    """Gap bounds between two solutions started at z0 and z0_bar after time t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    z0, z0_bar = np.asarray(z0, float), np.asarray(z0_bar, float)
    n_l = n_l or len(z0) // 2
    gap0 = float(np.linalg.norm(z0 - z0_bar))
    state_gap = gap0 * np.exp(lipschitz * t)
    var_gap = np.linalg.norm(z0 + z0_bar) * gap0 * np.exp(2 * lipschitz * t) / n_l
    return float(state_gap), float(var_gap)


def spectral_lipschitz(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2))


# ------------------------------------------------------------------- rounds

@dataclass
class RoundSummary:
    round: int
    lane: str
    t_enter: float
    t_exit: float
    t_next: float
    var_0: float
    delta_enter: float
    delta_enter_s: float
    delta_enter_v: float
    var_1: float
    delta_exit: float
    delta_exit_s: float
    delta_exit_v: float
    var_next: float
    bound_var_1: float = float("nan")
    bound_var_next: float = float("nan")

    def dominated(self, tol: float = 0.0) -> bool:
        return self.var_1 <= self.bound_var_1 + tol and self.var_next <= self.bound_var_next + tol

    def to_json(self) -> dict:
        return asdict(self)


def build_rounds(source) -> list[RoundSummary]:
    """Rounds per lane: AV enters, controls, exits, lane stays uncontrolled until the next entry.

    ``source`` is a trajectory or a plain list of jump events.
    """
    jumps = getattr(source, "jumps", source)
    out = []
    for lane in ("L", "R"):
        enters = [j for j in jumps if j.enter_lane == lane]
        exits = [j for j in jumps if j.exit_lane == lane]
        k = 0
        for i, e_in in enumerate(enters[:-1]):
            e_out = next((x for x in exits if x.time > e_in.time), None)
            e_next = enters[i + 1]
            if e_out is None or e_out.time >= e_next.time:
                continue
            out.append(RoundSummary(
                round=k, lane=lane, t_enter=e_in.time, t_exit=e_out.time, t_next=e_next.time,
                var_0=sum(e_in.enter_var_pre), delta_enter=e_in.delta_enter,
                delta_enter_s=e_in.enter_var_post[0] - e_in.enter_var_pre[0],
                delta_enter_v=e_in.enter_var_post[1] - e_in.enter_var_pre[1],
                var_1=sum(e_out.exit_var_pre), delta_exit=e_out.delta_exit,
                delta_exit_s=e_out.exit_var_post[0] - e_out.exit_var_pre[0],
                delta_exit_v=e_out.exit_var_post[1] - e_out.exit_var_pre[1],
                var_next=sum(e_next.enter_var_pre)))
            k += 1
    return sorted(out, key=lambda r: (r.t_enter, r.lane))


def attach_bounds(rounds: list[RoundSummary], params: BoundParams, jump_enter: float | None = None,
                  jump_exit: float | None = None, use_state_dependent: bool = False) -> list[RoundSummary]:
    """Evaluate round_bound from each round's measured start variance.

    Jump constants default to the measured deltas of the round itself.
    """
    for r in rounds:
        je = r.delta_enter if jump_enter is None else jump_enter
        jx = r.delta_exit if jump_exit is None else jump_exit
        r.bound_var_1, r.bound_var_next = round_bound(
            params, r.var_0, je, jx, r.t_exit - r.t_enter, r.t_next - r.t_exit, use_state_dependent)
    return rounds


def dominance_rate(rounds: list[RoundSummary], tol: float = 0.0) -> float:
    if not rounds:
        return float("nan")
    return sum(r.dominated(tol) for r in rounds) / len(rounds)


# ------------------------------------------------------------------- orbits

def orbit_vector(state: HybridState) -> np.ndarray:
    """Both lanes as [s, v] pairs; controlled lane starts at the AV's leader (AV last),
    uncontrolled lane starts at the vehicle ahead of the AV's projected position."""
    c = state.controlled.circumference
    av = state.controlled.positions[-1]
    parts = []
    for name in ("L", "R"):
        lane = state.lane(name)
        s, v = lane.headways(), lane.velocities
        if not lane.av_present:
            k = insertion_leader(lane.positions, av, c)
            s, v = np.roll(s, -k), np.roll(v, -k)
        parts.append(interleave(s, v))
    return np.concatenate(parts)


def _aligned_l1(x: np.ndarray, y: np.ndarray, cyclic_slices: list[slice]) -> float:
    """L1 distance with each uncontrolled-lane block aligned by its best cyclic shift.

    The projected-leader anchor flips when the AV passes an HV of the other
    lane; the shift search removes that artificial relabeling.
    """
    total = 0.0
    done = np.zeros(len(x), bool)
    for sl in cyclic_slices:
        a, b = x[sl].reshape(-1, 2), y[sl].reshape(-1, 2)
        total += min(np.abs(a - np.roll(b, k, axis=0)).sum() for k in range(len(a)))
        done[sl] = True
    return total + float(np.abs(x[~done] - y[~done]).sum())


@dataclass
class OrbitReport:
    converged: bool
    t_converged: float | None
    times: np.ndarray = field(repr=False)
    distance: np.ndarray = field(repr=False)
    threshold: float = 0.05
    period: float = 0.0

    @property
    def tail_max(self) -> float:
        if not self.converged:
            return float("nan")
        return float(self.distance[self.times >= self.t_converged].max())


def detect_periodic_orbit(traj, T: float, threshold: float = 0.05, hold_rounds: float = 2.0) -> OrbitReport:
    """Distance d(t) = ||x_t - x_{t-2T}||_1 / dim and the time it settles below ``threshold``."""
    period = 2.0 * T
    dt_s = float(np.median(np.diff(traj.times)))
    lag = int(round(period / dt_s))
    if len(traj.times) <= lag or traj.times[-1] - traj.times[0] < 4 * period - 1e-9:
        raise ValueError("trajectory must span at least four rounds")
    xs = [orbit_vector(s) for s in traj.states]
    dims = len(xs[0])
    d = np.empty(len(xs) - lag)
    for i in range(lag, len(xs)):
        st = traj.states[i]
        # uncontrolled lane block position in the concatenated vector
        n_l = st.lane_l.n
        blk = slice(0, 2 * n_l) if not st.lane_l.av_present else slice(2 * n_l, dims)
        if traj.states[i - lag].mode != st.mode:
            d[i - lag] = np.inf
            continue
        d[i - lag] = _aligned_l1(xs[i], xs[i - lag], [blk]) / dims
    times = traj.times[lag:]
    above = np.flatnonzero(~(d < threshold))
    start = 0 if above.size == 0 else above[-1] + 1
    ok = start < len(d) and times[-1] - times[start] >= hold_rounds * period - 1e-9
    return OrbitReport(converged=bool(ok), t_converged=float(times[start]) if ok else None,
                       times=times, distance=d, threshold=threshold, period=period)


# ------------------------------------------------------------------ regimes

class Regime(str, Enum):
    PHANTOM_CAR = "PhantomCar"
    INSUFFICIENT = "InsufficientControl"
    SUFFICIENT = "SufficientControl"
    BLOWUP = "EventualBlowup"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class RegimeThresholds:
    low: float = 5.0
    high: float = 20.0
    t_phantom: float = 5.0


@dataclass
class RegimeLabel:
    label: Regime
    orbit_mean: dict
    end_controlled: float
    end_uncontrolled: float
    orbit: OrbitReport | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"label": self.label.value, "orbit_mean": self.orbit_mean,
                "end_controlled": self.end_controlled, "end_uncontrolled": self.end_uncontrolled,
                "orbit_converged": None if self.orbit is None else self.orbit.converged,
                "orbit_t_converged": None if self.orbit is None else self.orbit.t_converged}


def orbit_statistics(traj, T: float, t_from: float) -> tuple[dict, float, float]:
    """Orbit-mean lane variances over whole periods after ``t_from`` and mean end-of-period values."""
    period = 2.0 * T
    n_per = int((traj.times[-1] - t_from + 1e-9) // period)
    n_per = max(n_per, 1)
    t0 = traj.times[-1] - n_per * period
    win = traj.times >= t0 - 1e-9
    # drop the closing sample so the window spans whole periods
    win &= traj.times < traj.times[-1] - 1e-9 if n_per * period > 0 else win
    means = {lane: float(traj.total_variance(lane)[win].mean()) for lane in ("L", "R")}
    post = [j for j in traj.jumps if j.time >= t0 - 1e-9]
    end_c = float(np.mean([sum(j.exit_var_pre) for j in post])) if post else float("nan")
    end_u = float(np.mean([sum(j.enter_var_pre) for j in post])) if post else float("nan")
    return means, end_c, end_u


def classify_regime(traj, T: float, thresholds: RegimeThresholds | None = None,
                    orbit: OrbitReport | None = None) -> RegimeLabel:
    th = thresholds or RegimeThresholds()
    if orbit is None:
        orbit = detect_periodic_orbit(traj, T)
    if not orbit.converged:
        return RegimeLabel(Regime.UNCLASSIFIED, {}, float("nan"), float("nan"), orbit)
    means, end_c, end_u = orbit_statistics(traj, T, orbit.t_converged)
    if end_c < th.low and end_u > th.high:
        label = Regime.BLOWUP
    elif all(m > th.high for m in means.values()):
        label = Regime.INSUFFICIENT
    elif all(m < th.low for m in means.values()):
        label = Regime.PHANTOM_CAR if T <= th.t_phantom else Regime.SUFFICIENT
    else:
        label = Regime.UNCLASSIFIED
    return RegimeLabel(label, means, end_c, end_u, orbit)
