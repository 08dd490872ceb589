"""Monte-Carlo audit of the conditional guarantee across tree depths.

For each depth, redraws calibration sets from a fixed cluster mixture, fits
the per-partition binning, and reports how often every (partition, bin) cell
lands within the analytic epsilon of its true conditional accuracy.

Usage:
    python scripts/coverage_check.py --trials 200
    python scripts/coverage_check.py --depths 0 1 2 3 --proxy-shift 0.05
"""

import argparse
import sys

from qacal.guarantees import (
    SyntheticSpec,
    choose_b,
    validate_conditional_guarantee,
)

DEFAULT_MISCALIBRATION = ((0.3, 1.5), (-0.3, 0.7), (0.2, 0.5), (-0.2, 2.0))


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points-per-cluster", type=int, default=1000)
    p.add_argument("--depths", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--eps-target", type=float, default=0.15)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--proxy-shift", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=11)
    return p.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    spec = SyntheticSpec(
        n_partitions=len(DEFAULT_MISCALIBRATION),
        points_per_partition=args.points_per_cluster,
        miscalibration=DEFAULT_MISCALIBRATION,
        seed=args.seed,
    )
    b = choose_b(spec.n_total, args.alpha, args.proxy_shift, args.eps_target)
    if b is None:
        print(f"target eps={args.eps_target:g} infeasible at n={spec.n_total}", file=sys.stderr)
        return 1
    print(
        f"n={spec.n_total} b={b} alpha={args.alpha:g} "
        f"nu={args.proxy_shift:g} trials={args.trials}"
    )
    header = f"{'depth':>5} {'epsilon':>9} {'coverage':>9} {'worst_gap':>10}"
    print(header)
    print("-" * len(header))
    failed = False
    for depth in args.depths:
        report = validate_conditional_guarantee(
            spec,
            part_depth=depth,
            b=b,
            alpha=args.alpha,
            trials=args.trials,
            proxy_shift=args.proxy_shift,
        )
        flag = "" if report.coverage >= 1.0 - args.alpha else "  <-- below 1 - alpha"
        failed = failed or bool(flag)
        print(
            f"{depth:>5} {report.epsilon:>9.4f} {report.coverage:>9.3f} "
            f"{report.worst_gap:>10.4f}{flag}"
        )
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
