"""Existence horizon, convergence series and theorem constants for a config.

    python3 scripts/horizon_table.py --config configs/extinction.toml
"""

import argparse

from bdlp.bounds import convergence_terms
from bdlp import pipeline
from bdlp.config import parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/stationary.toml")
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.5, 0.9, 0.99])
    ap.add_argument("--terms", type=int, default=2000)
    args = ap.parse_args()
    cfg = parse_config(args.config)
    summary = pipeline.bounds_summary(cfg)
    for k, v in summary.items():
        print(f"{k:<24} {v}")
    print()
    print(f"{'T/T_delta':>10} {'sum':>12} {'tail n>200':>12} {'first n with tail < 1e-12':>26}")
    for f in args.fractions:
        _, sums = convergence_terms(args.terms, f, 1.0)
        tail = sums[-1] - sums
        # the last partial sum stands in for the limit, so only early crossings are meaningful
        first = next((n + 1 for n, x in enumerate(tail[: args.terms // 2]) if x < 1e-12), None)
        label = str(first) if first else f"> {args.terms // 2}"
        print(f"{f:10.3g} {sums[-1]:12.6g} {tail[199]:12.3g} {label:>26}")


if __name__ == "__main__":
    main()
