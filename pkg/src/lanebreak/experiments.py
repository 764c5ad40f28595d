"""Scenario configuration, single runs, sweeps and summaries."""
from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import io
from .analysis import (BoundParams, RegimeThresholds, assumption1_check, attach_bounds, build_rounds,
                       classify_regime, detect_periodic_orbit, dominance_rate, fit_envelopes)
from .controllers import ControllerSpec, base_of, spec_from_dict, spec_to_dict, standard_gain
from .gains import WeightSpec
from .ovm import OvmParams, equilibrium
from .sim import Trajectory, random_initial_state, run_trajectory, simulate_lane
from .state import JumpEvent, hybrid_equilibrium, nominal_initial_states

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_frac = {"type": "number", "minimum": 0, "maximum": 1}

_controller_schema = {
    "type": "object",
    "properties": {
        "variant": {"enum": ["fixed_duration", "anticipatory", "traffic_aware"]},
        "T": _pos,
        "p_ex": _frac,
        "s_hat_av": {"type": ["number", "null"], "minimum": 0},
        "s_hat_frac": _frac,
        "dT": {"type": ["number", "null"], "minimum": 0},
        "p_en_s": _frac,
        "p_en_v": _frac,
        "base": {"$ref": "#/$defs/controller"},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "lanebreak scenario",
    "type": "object",
    "$defs": {"controller": _controller_schema},
    "properties": {
        "ovm": {
            "type": "object",
            "properties": {"circumference": _pos, "alpha": _pos, "beta": _pos, "s_st": _pos,
                           "s_go": _pos, "v_max": _pos},
            "additionalProperties": False,
        },
        "weights": {
            "type": "object",
            "properties": {"gamma_s": _pos, "gamma_v": _pos, "gamma_u": _pos},
            "additionalProperties": False,
        },
        "n": {"type": "integer", "minimum": 3},
        "controller": {"$ref": "#/$defs/controller"},
        "horizon": _pos,
        "min_rounds": {"type": "integer", "minimum": 0},
        "dt": _pos,
        "sample_every": _pos,
        "seed": {"type": "integer", "minimum": 0},
        "dynamics": {"enum": ["nonlinear", "linearized"]},
        "emergency_brake": {"type": "boolean"},
        "init": {"enum": ["random", "equilibrium"]},
        "perturbation": {
            "type": "object",
            "properties": {"ds": {"type": "number", "minimum": 0}, "dv": {"type": "number", "minimum": 0}},
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
        "write_trajectory": {"type": "boolean"},
        "analysis": {
            "type": "object",
            "properties": {
                "fit": {"type": "boolean"},
                "bounds": {"type": "boolean"},
                "orbit": {"type": "boolean"},
                "regime": {"type": "boolean"},
                "orbit_threshold": _pos,
                "low": _num,
                "high": _num,
                "t_phantom": _num,
                "eps": {"type": "number", "minimum": 0},
                "state_dependent": {"type": "boolean"},
                "fit_floor": _pos,
                "saturation_fraction": _frac,
                "nominal_horizon_c": _pos,
                "nominal_horizon_u": _pos,
                "slow_controlled_below": {"type": "number", "minimum": 0},
                "jump_constants": {
                    "type": ["object", "null"],
                    "properties": {"enter": _num, "exit": _num},
                    "required": ["enter", "exit"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {"T_list": {"type": "array", "items": _pos, "minItems": 1},
                           "workers": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "ovm": {"circumference": 400.0, "alpha": 0.6, "beta": 0.9, "s_st": 5.0, "s_go": 35.0, "v_max": 30.0},
    "weights": {"gamma_s": 0.03, "gamma_v": 0.15, "gamma_u": 1.0},
    "n": 20,
    "controller": {"variant": "fixed_duration", "T": 30.0},
    "horizon": 600.0,
    "min_rounds": 6,
    "dt": 0.01,
    "sample_every": 0.1,
    "seed": 0,
    "dynamics": "nonlinear",
    "emergency_brake": True,
    "init": "random",
    "perturbation": {"ds": 12.0, "dv": 7.5},
    "output_dir": "out",
    "write_trajectory": True,
    "analysis": {
        "fit": True, "bounds": True, "orbit": True, "regime": True,
        "orbit_threshold": 0.05, "low": 5.0, "high": 20.0, "t_phantom": 5.0,
        "eps": 0.5, "state_dependent": True, "fit_floor": 1e-3, "saturation_fraction": 0.5,
        "nominal_horizon_c": 120.0, "nominal_horizon_u": 600.0,
        "slow_controlled_below": 0.0, "jump_constants": None,
    },
    "sweep": {"T_list": [3.0, 8.5, 30.0, 120.0], "workers": 1},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "controller":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc: dict) -> None:
    """Raise ConfigError listing every schema violation with its field path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            path = ".".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{path}: {e.message}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


@dataclass
class ScenarioConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, doc: dict | None) -> "ScenarioConfig":
        doc = doc or {}
        validate(doc)
        merged = _merge(DEFAULTS, doc)
        try:
            cfg = cls(raw=merged)
            cfg.params, cfg.weights, cfg.controller  # construct to surface value errors
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            doc = io.read_json(path)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except ValueError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("invalid config:\n  <root>: must be a JSON object")
        return cls.from_dict(doc)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        raw = copy.deepcopy(self.raw)
        for k, v in kw.items():
            if v is not None:
                raw[k] = v
        return ScenarioConfig.from_dict(raw)

    def with_T(self, T: float) -> "ScenarioConfig":
        raw = copy.deepcopy(self.raw)
        ctrl = raw["controller"]
        if ctrl.get("variant") == "traffic_aware":
            base = ctrl.setdefault("base", {"variant": "fixed_duration"})
            base["T"] = T
        else:
            ctrl["T"] = T
        return ScenarioConfig.from_dict(raw)

    @property
    def params(self) -> OvmParams:
        return OvmParams(**self.raw["ovm"])

    @property
    def weights(self) -> WeightSpec:
        return WeightSpec(**self.raw["weights"])

    @property
    def controller(self) -> ControllerSpec:
        return spec_from_dict(self.raw["controller"])

    @property
    def T(self) -> float:
        return base_of(self.controller).T

    @property
    def analysis(self) -> dict:
        return self.raw["analysis"]

    @property
    def effective_horizon(self) -> float:
        return max(self.raw["horizon"], self.raw["min_rounds"] * 2 * self.T)

    def thresholds(self) -> RegimeThresholds:
        a = self.analysis
        return RegimeThresholds(low=a["low"], high=a["high"], t_phantom=a["t_phantom"])

    def to_json(self) -> dict:
        return copy.deepcopy(self.raw)


@dataclass
class RunSummary:
    T: float
    controller: dict
    seed: int
    regime: str
    orbit_converged: bool
    orbit_t_converged: float | None
    orbit_mean: dict
    end_controlled: float
    end_uncontrolled: float
    post_orbit_rounds: int
    delta_exit_mean: float
    delta_exit_std: float
    delta_enter_mean: float
    delta_enter_std: float
    var_ratio_min: float
    var_ratio_max: float
    ratio_excess_max: float
    collisions: int
    switches: int
    wall_time: float
    dominance: float | None = None

    def to_json(self) -> dict:
        return dict(self.__dict__)

    def aggregate_row(self) -> dict:
        return {"T": self.T, "regime": self.regime,
                "orbit_var_L": self.orbit_mean.get("L", float("nan")),
                "orbit_var_R": self.orbit_mean.get("R", float("nan")),
                "mean_delta_exit": self.delta_exit_mean, "mean_delta_enter": self.delta_enter_mean,
                "collisions": self.collisions}


def initial_state(cfg: ScenarioConfig):
    p, n = cfg.params, cfg.raw["n"]
    if cfg.raw["init"] == "equilibrium":
        return hybrid_equilibrium(p, n)
    pert = cfg.raw["perturbation"]
    return random_initial_state(cfg.raw["seed"], p, n=n, w=cfg.weights, ds=pert["ds"], dv=pert["dv"],
                                dt=cfg.raw["dt"])


def simulate(cfg: ScenarioConfig) -> Trajectory:
    return run_trajectory(initial_state(cfg), cfg.controller, cfg.effective_horizon, dt=cfg.raw["dt"],
                          p=cfg.params, w=cfg.weights, dynamics=cfg.raw["dynamics"],
                          sample_every=cfg.raw["sample_every"], emergency_brake=cfg.raw["emergency_brake"])


def variance_ratio_samples(traj: Trajectory, p: OvmParams) -> np.ndarray:
    """var / ||z - z*||^2 on every sample (both lanes) that passes the velocity-sign check."""
    out = []
    for st in traj.states:
        for lane in (st.lane_l, st.lane_r):
            eq = equilibrium(lane.n, p)
            if not assumption1_check(lane, eq):
                continue
            x = lane.state_vector() - np.tile([eq.s_star, eq.v_star], lane.n)
            nrm = float(x @ x)
            if nrm == 0.0:
                continue
            var = np.var(lane.headways()) + np.var(lane.velocities)
            out.append((var / nrm, 1.0 / lane.n))
    return np.array(out).reshape(-1, 2)


def post_orbit_jumps(traj: Trajectory, t_from: float | None) -> list[JumpEvent]:
    if t_from is None:
        t_from = 0.5 * traj.times[-1]
    return [j for j in traj.jumps if j.time >= t_from - 1e-9]


def summarize(cfg: ScenarioConfig, traj: Trajectory, wall: float) -> tuple[RunSummary, object]:
    a = cfg.analysis
    T = cfg.T
    label = None
    orbit = None
    if a["orbit"] or a["regime"]:
        try:
            orbit = detect_periodic_orbit(traj, T, threshold=a["orbit_threshold"])
        except ValueError as exc:
            log.warning("orbit detection skipped: %s", exc)
    if a["regime"] and orbit is not None:
        label = classify_regime(traj, T, cfg.thresholds(), orbit=orbit)
    t_from = orbit.t_converged if orbit is not None and orbit.converged else None
    jumps = post_orbit_jumps(traj, t_from)
    de = np.array([j.delta_exit for j in jumps]) if jumps else np.array([np.nan])
    dn = np.array([j.delta_enter for j in jumps]) if jumps else np.array([np.nan])
    ratios = variance_ratio_samples(traj, cfg.params)
    summary = RunSummary(
        T=T, controller=spec_to_dict(cfg.controller), seed=cfg.raw["seed"],
        regime=label.label.value if label else "Unclassified",
        orbit_converged=bool(orbit is not None and orbit.converged),
        orbit_t_converged=t_from,
        orbit_mean=label.orbit_mean if label else {},
        end_controlled=label.end_controlled if label else float("nan"),
        end_uncontrolled=label.end_uncontrolled if label else float("nan"),
        post_orbit_rounds=len(jumps) // 2,
        delta_exit_mean=float(de.mean()), delta_exit_std=float(de.std()),
        delta_enter_mean=float(dn.mean()), delta_enter_std=float(dn.std()),
        var_ratio_min=float(ratios[:, 0].min()) if len(ratios) else float("nan"),
        var_ratio_max=float(ratios[:, 0].max()) if len(ratios) else float("nan"),
        ratio_excess_max=float((ratios[:, 0] - ratios[:, 1]).max()) if len(ratios) else float("nan"),
        collisions=traj.collisions, switches=len(traj.jumps), wall_time=wall)
    return summary, orbit


def nominal_fit(cfg: ScenarioConfig) -> BoundParams:
    p, w, n, a = cfg.params, cfg.weights, cfg.raw["n"], cfg.analysis
    ctrl, unctrl = nominal_initial_states(p, n)
    kw = dict(dt=cfg.raw["dt"], p=p, dynamics=cfg.raw["dynamics"], sample_every=cfg.raw["sample_every"],
              emergency_brake=cfg.raw["emergency_brake"])
    rc = simulate_lane(ctrl, a["nominal_horizon_c"], gain=standard_gain(n, p, w), **kw)
    ru = simulate_lane(unctrl, a["nominal_horizon_u"], **kw)
    return fit_envelopes((rc.times, rc.total_variance), (ru.times, ru.total_variance),
                         floor=a["fit_floor"], saturation_fraction=a["saturation_fraction"], eps=a["eps"])


def evaluate_bounds(cfg: ScenarioConfig, params: BoundParams, jumps: list[JumpEvent],
                    t_from: float | None = None):
    """Rounds (post ``t_from``) with round_bound attached."""
    rounds = build_rounds(jumps)
    if t_from is not None:
        rounds = [r for r in rounds if r.t_enter >= t_from - 1e-9]
    a = cfg.analysis
    if cfg.T < a["slow_controlled_below"]:
        params = params.slowed()
    jc = a["jump_constants"] or {}
    attach_bounds(rounds, params, jc.get("enter"), jc.get("exit"), use_state_dependent=a["state_dependent"])
    return rounds


def run_scenario(cfg: ScenarioConfig, out_dir=None, params: BoundParams | None = None) -> RunSummary:
    """Simulate one scenario and write every artifact into ``out_dir``."""
    out = Path(out_dir or cfg.raw["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    traj = simulate(cfg)
    wall = time.perf_counter() - t0
    summary, orbit = summarize(cfg, traj, wall)
    if cfg.raw["write_trajectory"]:
        io.write_trajectory_csv(traj, out / "trajectory.csv")
    io.write_variance_csv(traj, out / "variance.csv")
    io.write_json([j.to_json() for j in traj.jumps], out / "jumps.json")
    n = cfg.raw["n"]
    standard_gain(n, cfg.params, cfg.weights).save(out / "gain.json")
    rounds = build_rounds(traj.jumps)
    if cfg.analysis["bounds"]:
        if params is None and cfg.analysis["fit"]:
            params = nominal_fit(cfg)
            params.save(out / "bound_params.json")
        if params is not None:
            t_from = orbit.t_converged if orbit is not None and orbit.converged else None
            rounds = evaluate_bounds(cfg, params, traj.jumps)
            post = [r for r in rounds if t_from is None or r.t_enter >= t_from - 1e-9]
            summary.dominance = dominance_rate(post) if post else None
    if rounds:
        io.write_rounds_csv(rounds, out / "rounds.csv")
    io.write_json([r.to_json() for r in rounds], out / "rounds.json")
    io.write_json(summary.to_json(), out / "summary.json")
    io.write_json(cfg.to_json(), out / "config.json")
    return summary


def jump_events_from_json(records: list[dict]) -> list[JumpEvent]:
    keys = ("time", "direction", "exit_headways", "enter_headways", "av_velocity", "exit_var_pre",
            "exit_var_post", "enter_var_pre", "enter_var_post", "degenerate")
    out = []
    for r in records:
        d = {k: r[k] for k in keys}
        for k in ("exit_headways", "enter_headways", "exit_var_pre", "exit_var_post", "enter_var_pre",
                  "enter_var_post"):
            d[k] = tuple(d[k])
        out.append(JumpEvent(**d))
    return out


def _sweep_one(args):
    raw, T, out = args
    cfg = ScenarioConfig.from_dict(raw).with_T(T)
    try:
        return T, run_scenario(cfg, out).to_json(), None
    except Exception as exc:  # isolate per-T failures
        log.exception("run for T=%s failed", T)
        return T, None, f"{type(exc).__name__}: {exc}"


def sweep(cfg: ScenarioConfig, T_list, out_dir) -> tuple[list[dict], dict]:
    """Run one scenario per T; returns (aggregate rows, errors by T)."""
    T_list = list(T_list)
    if not T_list:
        raise ConfigError("T list must not be empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.to_json(), T, out / f"T_{T:g}") for T in T_list]
    workers = cfg.raw["sweep"]["workers"]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows, errors = [], {}
    for T, summ, err in results:
        if err is not None:
            errors[T] = err
            continue
        s = RunSummary(**summ)
        rows.append(s.aggregate_row())
    if rows:
        io.write_rows_csv(rows, out / "sweep.csv", "sweep")
    io.write_json({"rows": rows, "errors": {str(k): v for k, v in errors.items()}}, out / "sweep.json")
    return rows, errors


def jump_table(cfg: ScenarioConfig, T_list, out_dir) -> list[dict]:
    """Post-orbit jump statistics per T (mean and standard deviation)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for T in T_list:
        c = cfg.with_T(T)
        traj = simulate(c)
        summ, _ = summarize(c, traj, 0.0)
        rows.append({"T": T, "regime": summ.regime,
                     "delta_exit_mean": summ.delta_exit_mean, "delta_exit_std": summ.delta_exit_std,
                     "delta_enter_mean": summ.delta_enter_mean, "delta_enter_std": summ.delta_enter_std,
                     "post_orbit_rounds": summ.post_orbit_rounds})
    io.write_rows_csv(rows, out / "jump_table.csv", "jump-table")
    io.write_json(rows, out / "jump_table.json")
    return rows
