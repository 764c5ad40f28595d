"""Command line entry point: ``lanebreak <verb> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .analysis import BoundParams, dominance_rate
from .experiments import (ConfigError, ScenarioConfig, evaluate_bounds, jump_events_from_json, jump_table,
                          nominal_fit, run_scenario, sweep)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _t_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--t-list expects comma separated numbers: {exc}") from exc
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lanebreak", description="Two-lane ring road with a lane-switching AV.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp, t_list=False):
        sp.add_argument("--config", type=Path, help="JSON scenario file")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--dynamics", choices=["nonlinear", "linearized"])
        if t_list:
            sp.add_argument("--t-list", type=_t_list, dest="t_list")

    common(sub.add_parser("simulate", help="run one scenario"))
    common(sub.add_parser("sweep", help="run the scenario for each T"), t_list=True)
    common(sub.add_parser("fit", help="fit variance envelopes on nominal runs"))
    b = sub.add_parser("bounds", help="compare measured round variances with the bound")
    common(b)
    b.add_argument("--params", type=Path, help="bound parameter JSON (fitted when omitted)")
    b.add_argument("--jumps", type=Path, help="jump events JSON (simulated when omitted)")
    common(sub.add_parser("jump-table", help="post-orbit jump statistics per T"), t_list=True)
    return parser


def _load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig.from_dict({})
    over = {"seed": args.seed, "dynamics": args.dynamics}
    if args.out is not None:
        over["output_dir"] = str(args.out)
    return cfg.with_overrides(**over)


def _t_values(args, cfg: ScenarioConfig) -> list[float]:
    vals = args.t_list if getattr(args, "t_list", None) is not None else cfg.raw["sweep"]["T_list"]
    if not vals:
        raise ConfigError("T list must not be empty")
    if any(v <= 0 for v in vals):
        raise ConfigError("T values must be positive")
    return vals


def _run(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.raw["output_dir"])
    if args.verb == "simulate":
        s = run_scenario(cfg, out)
        print(f"regime={s.regime} collisions={s.collisions} switches={s.switches} -> {out}")
        return EXIT_OK
    if args.verb == "sweep":
        rows, errors = sweep(cfg, _t_values(args, cfg), out)
        for r in rows:
            print(f"T={r['T']:g} regime={r['regime']}")
        for T, err in errors.items():
            print(f"T={T:g} failed: {err}", file=sys.stderr)
        return EXIT_RUNTIME if errors else EXIT_OK
    if args.verb == "fit":
        out.mkdir(parents=True, exist_ok=True)
        params = nominal_fit(cfg)
        params.save(out / "bound_params.json")
        print(f"alpha2={params.alpha2:.4f} beta_dec={params.beta_dec:.4f} beta2={params.beta2:.4f} "
              f"t_eps={params.t_eps:.2f} -> {out / 'bound_params.json'}")
        return EXIT_OK
    if args.verb == "bounds":
        out.mkdir(parents=True, exist_ok=True)
        params = BoundParams.load(args.params) if args.params else nominal_fit(cfg)
        if args.jumps:
            jumps = jump_events_from_json(io.read_json(args.jumps))
        else:
            from .experiments import simulate
            jumps = simulate(cfg).jumps
        rounds = evaluate_bounds(cfg, params, jumps)
        if not rounds:
            print("no complete rounds in the jump record", file=sys.stderr)
            return EXIT_RUNTIME
        io.write_bounds_csv(rounds, out / "bounds.csv")
        io.write_rounds_csv(rounds, out / "rounds.csv")
        io.write_json([r.to_json() for r in rounds], out / "rounds.json")
        print(f"rounds={len(rounds)} dominated={dominance_rate(rounds):.3f} -> {out / 'bounds.csv'}")
        return EXIT_OK
    if args.verb == "jump-table":
        rows = jump_table(cfg, _t_values(args, cfg), out)
        for r in rows:
            print(f"T={r['T']:g} exit={r['delta_exit_mean']:.3f}+-{r['delta_exit_std']:.3f} "
                  f"enter={r['delta_enter_mean']:.3f}+-{r['delta_enter_std']:.3f}")
        return EXIT_OK
    raise AssertionError(args.verb)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        logging.getLogger("lanebreak").debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
