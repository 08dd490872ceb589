"""Sample-requirement tables for the conditional calibration bound.

Prints the smallest admissible per-bin mass b for a grid of calibration set
sizes and error targets, and optionally writes the full epsilon(b) curve to a
CSV for plotting elsewhere.

Usage:
    python scripts/bound_curve.py
    python scripts/bound_curve.py --alpha 0.05 --nu 0.025 --curve-out curve.csv
"""

import argparse
import csv
import sys

from qacal.guarantees import choose_b, epsilon_bound_qa


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[500, 1000, 2000, 4000, 8000])
    p.add_argument("--eps-targets", type=float, nargs="+", default=[0.05, 0.1, 0.15, 0.2])
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--curve-out", default=None, help="CSV of epsilon(b) for every n")
    p.add_argument("--curve-steps", type=int, default=100)
    return p.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    targets = list(args.eps_targets)
    header = f"{'n':>8} " + " ".join(f"eps<={t:g}".rjust(12) for t in targets)
    print(f"alpha={args.alpha:g} nu={args.nu:g}")
    print(header)
    print("-" * len(header))
    for n in args.n:
        cells = []
        for t in targets:
            b = choose_b(n, args.alpha, args.nu, t)
            if b is None:
                cells.append("infeasible".rjust(12))
            else:
                # bins the calibration set supports at that mass
                cells.append(f"b={b} ({n // b})".rjust(12))
        print(f"{n:>8} " + " ".join(cells))

    if args.curve_out:
        with open(args.curve_out, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["n", "b", "alpha", "nu", "epsilon"])
            for n in args.n:
                step = max(1, (n - 2) // args.curve_steps)
                for b in range(2, n + 1, step):
                    eps = epsilon_bound_qa(n, b, args.alpha, args.nu)
                    w.writerow([n, b, repr(args.alpha), repr(args.nu), repr(eps)])
        print(f"curve: {args.curve_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
