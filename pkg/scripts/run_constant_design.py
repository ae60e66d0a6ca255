"""Deviation statistics for the constant-contagion design.

    python scripts/run_constant_design.py --replications 20 --workers 8 --out runs/constant
"""
import argparse

from tlml.montecarlo import TARGETS, ScenarioConfig, run_scenario, write_scenario
from tlml.weights import WeightScheme


def print_table(stats, labels):
    print(f"{'scheme':<16}{'target':<8}{'mean':>10}{'sd':>10}{'skew':>10}{'kurt':>10}{'kept':>8}{'total':>8}")
    for label in labels:
        for target in TARGETS:
            s = stats[(label, target)]
            print(f"{label:<16}{target:<8}{s.mean:>10.4f}{s.sd:>10.4f}{s.skew:>10.3f}{s.kurt:>10.3f}"
                  f"{s.retained:>8d}{s.total:>8d}")


def main(design="constant", **extra):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--replications", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rho", type=float, nargs="+", default=[0.1, 0.5, 0.9])
    ap.add_argument("--out", default=f"runs/{design}")
    args = ap.parse_args()
    schemes = tuple(WeightScheme.geometric(r) for r in args.rho)
    cfg = ScenarioConfig(design=design, schemes=schemes, replications=args.replications, seed=args.seed,
                         workers=args.workers, **extra)
    stats = write_scenario(run_scenario(cfg), args.out)
    print_table(stats, [s.label for s in schemes])
    print(f"CSV bundle written to {args.out}")


if __name__ == "__main__":
    main()
