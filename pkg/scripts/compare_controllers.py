"""Seed-averaged post-orbit jump sizes for the three switching controllers."""
import argparse

import numpy as np

from lanebreak.experiments import ScenarioConfig, simulate, summarize


def controllers(T):
    ant = {"variant": "anticipatory", "T": T, "p_ex": 0.5}
    return {"fixed": {"variant": "fixed_duration", "T": T}, "anticipatory": ant,
            "integrated": {"variant": "traffic_aware", "p_en_s": 0.2, "p_en_v": 0.8, "base": ant}}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-list", default="8.5,30")
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    for T in (float(x) for x in args.t_list.split(",")):
        for name, ctrl in controllers(T).items():
            ex, en = [], []
            for seed in range(args.seeds):
                cfg = ScenarioConfig.from_dict({"seed": seed, "controller": ctrl})
                s, _ = summarize(cfg, simulate(cfg), 0.0)
                ex.append(s.delta_exit_mean)
                en.append(s.delta_enter_mean)
            print(f"T={T:g} {name:<13} exit {np.mean(ex):7.2f}  enter {np.mean(en):7.2f}")


if __name__ == "__main__":
    main()
