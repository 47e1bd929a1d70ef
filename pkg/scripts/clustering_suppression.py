"""Cluster index of the contact model against the competition model.

    python3 scripts/clustering_suppression.py [--config configs/clustering.toml]
"""

import argparse

from bdlp import pipeline
from bdlp.config import parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/clustering.toml")
    ap.add_argument("--replicas", type=int)
    args = ap.parse_args()
    cfg = parse_config(args.config).with_overrides(replicas=args.replicas)
    if not cfg.section("compare")["contact_control"]:
        cfg.resolved["compare"]["contact_control"] = True
    res = pipeline.compare(cfg)
    c = res.contact
    times = res.simulation.density.times
    r0 = cfg.section("compare")["r0"]
    near = res.simulation.pairs.edges[1:] <= r0 * (1 + 1e-12)
    # the competition bound is on k2 itself; k2 / rho^2 also grows when rho falls
    k2_cont = c["simulation"].pairs.k2[:, near].max(axis=1)
    k2_comp = res.simulation.pairs.k2[:, near].max(axis=1)
    print(f"max k2 over r <= {r0:g}; ci = k2 / rho^2 (contact: sim, hierarchy)")
    print(f"{'time':>6} {'rho_cont':>9} {'k2_cont':>9} {'ci_cont':>8} {'+-':>6} {'ci_hier':>8} "
          f"{'rho_comp':>9} {'k2_comp':>9} {'ci_comp':>8}")
    for i, t in enumerate(times):
        print(f"{t:6.2f} {c['simulation'].density.rho[i]:9.4f} {k2_cont[i]:9.4f} {c['cluster_index'][i]:8.3f} "
              f"{c['cluster_index_stderr'][i]:6.3f} {c['hierarchy_cluster_index'][i]:8.3f} "
              f"{res.simulation.density.rho[i]:9.4f} {k2_comp[i]:9.4f} {c['competition_cluster_index'][i]:8.3f}")
    if "C" in res.envelope_info:
        print(f"competition envelope: k2 <= C^2 = {res.envelope_info['C'] ** 2:.4g}")
    counts = {}
    for r in res.ledger.records:
        counts[r.status] = counts.get(r.status, 0) + 1
    print("ledger:", ", ".join(f"{k}={v}" for k, v in sorted(counts.items())), "| ok" if res.ok else "| FAILED")


if __name__ == "__main__":
    main()
