"""Fit variance envelopes on the nominal lanes and check round-bound dominance per T."""
import argparse
from pathlib import Path

from lanebreak.analysis import attach_bounds, build_rounds, dominance_rate
from lanebreak.experiments import ScenarioConfig, nominal_fit, simulate, summarize

# (enter, exit) jump constants per switch period
JUMP_CONSTANTS = {3.0: (10.0, 10.0), 8.5: (15.0, 60.0), 30.0: (15.0, 20.0), 120.0: (5.0, 20.0)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/fit"))
    ap.add_argument("--dynamics", choices=["nonlinear", "linearized"], default="nonlinear")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    base = ScenarioConfig.from_dict({"dynamics": args.dynamics})
    params = nominal_fit(base)
    params.save(args.out / "bound_params.json")
    print(f"alpha2={params.alpha2:.4f} decay={params.beta_dec:.4f} growth={params.beta2:.4f} t_eps={params.t_eps:.2f}")
    for T, (je, jx) in JUMP_CONSTANTS.items():
        cfg = base.with_T(T)
        traj = simulate(cfg)
        _, orbit = summarize(cfg, traj, 0.0)
        t0 = orbit.t_converged if orbit is not None and orbit.converged else 0.0
        rounds = [r for r in build_rounds(traj) if r.t_enter >= t0]
        p = params.slowed() if T == 8.5 else params
        for sd in (False, True):
            attach_bounds(rounds, p, je, jx, use_state_dependent=sd)
            print(f"T={T:g} state_dependent={sd}: dominated {dominance_rate(rounds):.2%} of {len(rounds)} rounds")


if __name__ == "__main__":
    main()
