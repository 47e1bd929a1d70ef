"""Command-line entry point: ``bdlp <subcommand> --config run.toml``.

Exit codes: 0 success, 2 configuration error, 3 runtime abort, 4 check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, pipeline
from .config import ConfigError, ExperimentConfig, parse_config
from .hierarchy import HierarchyError
from .simulator import ConfigurationError

log = logging.getLogger("bdlp")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECK = 4


def _fmt(x) -> str:
    return f"{float(x):.12g}"


class Writer:
    """Writes stamped CSV/JSON outputs into the run directory."""

    def __init__(self, cfg: ExperimentConfig, quiet: bool = False):
        self.cfg = cfg
        self.out = Path(cfg.resolved["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.quiet = quiet
        (self.out / "resolved_config.toml").write_text(cfg.to_toml())

    def csv(self, name: str, header, rows, extra=()) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            for line in list(self.cfg.header_lines()) + list(extra):
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        self.say(f"wrote {path}")
        return path

    def json(self, name: str, record: dict) -> Path:
        path = self.out / name
        stamped = {"bdlp_version": __version__, "config_sha256": self.cfg.digest, "master_seed": self.cfg.seed, **record}
        path.write_text(json.dumps(stamped, indent=2, default=_json_default) + "\n")
        self.say(f"wrote {path}")
        return path

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


# -- writers ------------------------------------------------------------------

def write_simulation(w: Writer, res: pipeline.SimulationResult) -> None:
    extra = [f"replicas {len(res.ensemble)}", f"absorbed {res.absorbed}", f"truncated {res.truncated}"]
    rows = []
    for tr in res.ensemble:
        for s in tr.snapshots:
            rows.append([_fmt(s.time), tr.metadata["replica"], s.n, _fmt(s.density)])
    w.csv("snapshots.csv", ["time", "replica", "N", "density"], rows, extra)
    dens = res.density
    w.csv("density.csv", ["time", "rho", "stderr"],
          [[_fmt(t), _fmt(r), _fmt(s)] for t, r, s in zip(dens.times, dens.rho, dens.stderr)], extra)
    if res.pairs is not None:
        w.csv("pair_correlation.csv", ["time", "r_lo", "r_hi", "k2", "stderr"], _pair_rows(res.pairs), extra)
    if w.cfg.section("simulate")["write_points"]:
        for tr in res.ensemble:
            for k, s in enumerate(tr.snapshots):
                if s.points is None:
                    continue
                path = w.out / f"points_{tr.metadata['replica']}_{k}.csv"
                np.savetxt(path, s.points, delimiter=",", fmt="%.12g",
                           header="\n".join(w.cfg.header_lines() + [f"time {s.time:.12g}"]))


def _pair_rows(hist):
    rows = []
    for i, t in enumerate(hist.times):
        for j in range(len(hist.edges) - 1):
            rows.append([_fmt(t), _fmt(hist.edges[j]), _fmt(hist.edges[j + 1]), _fmt(hist.k2[i, j]), _fmt(hist.stderr[i, j])])
    return rows


def write_hierarchy(w: Writer, traj) -> None:
    extra = [f"closure {w.cfg.section('hierarchy')['closure']}", f"dt {traj.dt:.6g}",
             f"clip_count {traj.clip_count}", f"valid {traj.valid}"]
    w.csv("hierarchy_rho.csv", ["time", "rho"], [[_fmt(t), _fmt(r)] for t, r in zip(traj.times, traj.rho)], extra)
    rows = []
    for i, t in enumerate(traj.times):
        r, k = traj.state(i).radial_profile()
        keep = r <= w.cfg.L / 2
        rows.extend([_fmt(t), _fmt(a), _fmt(b)] for a, b in zip(r[keep], k[keep]))
    w.csv("hierarchy_k2.csv", ["time", "r", "k2"], rows, extra)


def write_ledger(w: Writer, ledger, name: str = "ledger.csv") -> None:
    path = w.out / name
    ledger.write_csv(path, w.cfg.header_lines() + [f"{k} {v}" for k, v in ledger.values.items()])
    w.say(f"wrote {path}")


# -- subcommands --------------------------------------------------------------

def cmd_simulate(cfg, args) -> int:
    w = Writer(cfg, args.quiet)
    res = pipeline.simulate(cfg)
    write_simulation(w, res)
    return 0


def cmd_hierarchy(cfg, args) -> int:
    w = Writer(cfg, args.quiet)
    traj = pipeline.hierarchy(cfg)
    write_hierarchy(w, traj)
    if not traj.valid:
        log.warning("hierarchy run flagged invalid: clipped mass %.3g", traj.clip_mass)
    return 0


def cmd_stability(cfg, args) -> int:
    w = Writer(cfg, args.quiet)
    cert = pipeline.stability(cfg)
    if cert is None:
        w.json("certificate.json", {"theta": None, "b": None, "source": None, "xi": None, "worst_U": None})
        log.error("no certificate available for this kernel pair")
        return EXIT_CHECK
    rec = {k: _json_safe(v) for k, v in cert.to_record().items()}
    w.json("certificate.json", rec)
    if not args.quiet:
        print(json.dumps(rec, default=_json_default))
    if cert.violating_config is not None:
        return EXIT_CHECK
    return 0


def cmd_bounds(cfg, args) -> int:
    w = Writer(cfg, args.quiet)
    summary = pipeline.bounds_summary(cfg)
    rows = [[k, "" if v is None else (_fmt(v) if isinstance(v, (int, float)) else v)] for k, v in summary.items()]
    w.csv("bounds.csv", ["quantity", "value"], rows)
    if not args.quiet:
        width = max(len(k) for k in summary)
        for k, v in rows:
            print(f"{k:<{width}}  {v}")
    return 0


def cmd_compare(cfg, args) -> int:
    w = Writer(cfg, args.quiet)
    res = pipeline.compare(cfg)
    write_simulation(w, res.simulation)
    write_hierarchy(w, res.trajectory)
    dens = res.simulation.density
    hier_rho = {round(float(t), 9): float(r) for t, r in zip(res.trajectory.times, res.trajectory.rho)}
    w.csv("compare_rho.csv", ["time", "rho_sim", "stderr_sim", "rho_hierarchy"], [
        [_fmt(t), _fmt(r), _fmt(s), _fmt(hier_rho.get(round(float(t), 9), math.nan))]
        for t, r, s in zip(dens.times, dens.rho, dens.stderr)
    ])
    if res.simulation.pairs is not None:
        hp = res.simulation.pairs
        hidx = {round(float(t), 9): i for i, t in enumerate(res.hier_hist.times)}
        rows = []
        for i, t in enumerate(hp.times):
            j = hidx.get(round(float(t), 9))
            for b in range(len(hp.edges) - 1):
                hv = math.nan if j is None else res.hier_hist.k2[j, b]
                rows.append([_fmt(t), _fmt(hp.edges[b]), _fmt(hp.edges[b + 1]), _fmt(hp.k2[i, b]), _fmt(hp.stderr[i, b]), _fmt(hv)])
        w.csv("compare_k2.csv", ["time", "r_lo", "r_hi", "k2_sim", "stderr_sim", "k2_hierarchy"], rows)
    write_ledger(w, res.ledger)
    fails = [r for r in res.ledger.records if r.status == "fail" and r.check.split(":")[0] not in res.negative_controls]
    if not args.quiet:
        counts = {}
        for r in res.ledger.records:
            counts[r.status] = counts.get(r.status, 0) + 1
        print("ledger: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return EXIT_CHECK if fails else 0


COMMANDS = {
    "simulate": cmd_simulate,
    "hierarchy": cmd_hierarchy,
    "stability": cmd_stability,
    "bounds": cmd_bounds,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdlp", description="Spatial birth-death-competition experiments")
    ap.add_argument("--version", action="version", version=f"bdlp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--replicas", type=int, help="number of simulation replicas")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be a nonnegative integer")
        cfg = parse_config(args.config).with_overrides(args.seed, args.out, args.replicas)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except (ConfigurationError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HierarchyError, FloatingPointError, MemoryError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
