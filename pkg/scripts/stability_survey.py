"""Certified theta against the brute-force falsifier over gaussian width ratios.

    python3 scripts/stability_survey.py [--d 1] [--b 0.5] [--trials 2000]
"""

import argparse

from bdlp.kernels import Gaussian, KernelPair
from bdlp.stability import certify, verify_bruteforce


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--b", type=float, default=0.5)
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.25, 0.5, 0.75, 1.0, 1.5, 2.0])
    args = ap.parse_args()
    print(f"{'s-/s+':>6} {'source':>20} {'theta':>9} {'b':>8} {'min U':>10} {'min U at 10 theta':>18}")
    for ratio in args.ratios:
        pair = KernelPair(Gaussian(d=args.d, c=1.0, sigma=ratio), Gaussian(d=args.d, c=1.0, sigma=1.0), m=0.0)
        cert = certify(pair, args.b)
        if cert is None:
            print(f"{ratio:6.2f} {'none':>20}")
            continue
        ok = verify_bruteforce(pair, cert.theta, cert.b, trials=args.trials)
        bad = verify_bruteforce(pair, 10 * cert.theta, cert.b, trials=args.trials)
        print(f"{ratio:6.2f} {cert.source:>20} {cert.theta:9.4g} {cert.b:8.4g} {ok.min_U:10.4g} {bad.min_U:18.4g}")


if __name__ == "__main__":
    main()
