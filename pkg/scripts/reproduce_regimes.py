"""Run the four exemplar switch periods and print regime, orbit and jump statistics."""
import argparse
from pathlib import Path

from lanebreak.experiments import ScenarioConfig, run_scenario

T_VALUES = (3.0, 8.5, 30.0, 120.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/regimes"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    base = ScenarioConfig.from_dict({"seed": args.seed})
    print(f"{'T':>6} {'regime':<20} {'orbit L':>8} {'orbit R':>8} {'d_exit':>14} {'d_enter':>14} {'coll':>5}")
    for T in T_VALUES:
        s = run_scenario(base.with_T(T), args.out / f"T_{T:g}")
        print(f"{T:6g} {s.regime:<20} {s.orbit_mean.get('L', float('nan')):8.2f} "
              f"{s.orbit_mean.get('R', float('nan')):8.2f} "
              f"{s.delta_exit_mean:7.2f}({s.delta_exit_std:4.2f}) {s.delta_enter_mean:7.2f}({s.delta_enter_std:4.2f}) "
              f"{s.collisions:5d}")


if __name__ == "__main__":
    main()
