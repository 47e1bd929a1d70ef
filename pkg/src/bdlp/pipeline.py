"""Experiment pipeline: wire a parsed config through the library modules.

Functions here return in-memory results; :mod:`bdlp.cli` writes them out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import (
    BoundLedger,
    LedgerRecord,
    Observed,
    ScalePair,
    a_norm_bounds,
    alpha_horizon,
    beta,
    check_envelope,
    extinction_envelope,
    growth_envelope,
    pure_death_envelope,
    q_norm_bound,
    theorem2_constants,
    time_horizon,
)
from .config import ExperimentConfig
from .hierarchy import Grid, HierarchyTrajectory, TruncatedCorrelation, integrate
from .kernels import KernelPair, zero_kernel
from .simulator import Domain, PoissonIntensity, RunConfig, run_ensemble
from .stability import StabilityCertificate, certify, verify_bruteforce, with_empirical
from .statistics import DensityEstimate, PairHistogram, cluster_index, density_estimate, pair_correlation

__all__ = [
    "SimulationResult",
    "linear_bins",
    "simulate",
    "hierarchy",
    "hierarchy_histogram",
    "stability",
    "bounds_summary",
    "envelope_for",
    "monotone_records",
    "CompareResult",
    "compare",
]


@dataclass
class SimulationResult:
    ensemble: list
    density: DensityEstimate
    pairs: PairHistogram | None

    @property
    def truncated(self) -> int:
        return sum(tr.status == "truncated" for tr in self.ensemble)

    @property
    def absorbed(self) -> int:
        return sum(tr.status == "absorbed" for tr in self.ensemble)


def linear_bins(L: float, n_bins: int) -> np.ndarray:
    """Equal-width distance bins on [0, L/2]."""
    return np.linspace(0.0, L / 2, n_bins + 1)


def simulate(cfg: ExperimentConfig, pair: KernelPair | None = None, workers: int | None = None) -> SimulationResult:
    pair = cfg.pair if pair is None else pair
    sim = cfg.section("simulate")
    domain = Domain(cfg.d, cfg.L)
    run_cfg = RunConfig(
        t_end=sim["t_end"],
        observe_every=sim["observe_every"],
        max_points=sim["max_points"],
        keep_points=sim["keep_points"],
    )
    ensemble = run_ensemble(
        domain, pair, PoissonIntensity(sim["initial_intensity"]), run_cfg,
        replicas=sim["replicas"], master_seed=sim["seed"], workers=workers,
    )
    density = density_estimate(ensemble, domain.volume)
    pairs = None
    if sim["keep_points"]:
        pairs = pair_correlation(ensemble, cfg.L, cfg.d, linear_bins(cfg.L, sim["bins"]))
    return SimulationResult(ensemble, density, pairs)


def hierarchy(cfg: ExperimentConfig, pair: KernelPair | None = None) -> HierarchyTrajectory:
    pair = cfg.pair if pair is None else pair
    h = cfg.section("hierarchy")
    grid = Grid(cfg.d, cfg.L, h["grid_points"])
    state0 = TruncatedCorrelation.poisson(cfg.section("simulate")["initial_intensity"], grid)
    return integrate(
        state0, pair, h["closure"], t_end=h["t_end"], dt=h["dt"],
        observe_every=h["observe_every"], rtol=h["rtol"],
    )


def hierarchy_histogram(traj: HierarchyTrajectory, edges) -> PairHistogram:
    """Average the grid pair function over distance bins (zero stderr)."""
    edges = np.asarray(edges, dtype=float)
    r = traj.grid.radii().ravel()
    idx = np.digitize(r, edges) - 1
    n_bins = len(edges) - 1
    centres = 0.5 * (edges[1:] + edges[:-1])
    k2 = np.zeros((len(traj.times), n_bins))
    for i, field_ in enumerate(traj.k2):
        flat = np.asarray(field_).ravel()
        sums = np.bincount(idx[(idx >= 0) & (idx < n_bins)], weights=flat[(idx >= 0) & (idx < n_bins)], minlength=n_bins)
        counts = np.bincount(idx[(idx >= 0) & (idx < n_bins)], minlength=n_bins)
        prof_r, prof_k = traj.state(i).radial_profile()
        fallback = np.interp(centres, prof_r, prof_k)
        with np.errstate(invalid="ignore", divide="ignore"):
            k2[i] = np.where(counts > 0, sums / np.maximum(counts, 1), fallback)
    return PairHistogram(traj.times, edges, k2, np.zeros_like(k2), 1, traj.grid.L**traj.grid.d)


def stability(cfg: ExperimentConfig, pair: KernelPair | None = None) -> StabilityCertificate | None:
    """Best certificate for the pair, checked by the brute-force falsifier when enabled."""
    pair = cfg.pair if pair is None else pair
    st = cfg.section("stability")
    cert = certify(pair, st["b"])
    if cert is None or not st["verify"] or math.isinf(cert.theta):
        return cert
    res = verify_bruteforce(pair, cert.theta, cert.b, n_max=st["n_max"], trials=st["trials"], rng_seed=cfg.seed)
    return with_empirical(cert, res)


def _default_delta(pair: KernelPair, b: float) -> float:
    if b == 0:
        return pair.m
    # b > 0 needs delta < m strictly; for m = 0 this makes delta negative
    return pair.m - 0.5 * max(pair.m, pair.mass_plus)


def envelope_for(cfg: ExperimentConfig, pair: KernelPair, cert: StabilityCertificate | None, k2_sup0: float):
    """Envelope matching the parameter regime of ``pair`` and the constants behind it."""
    bd = cfg.section("bounds")
    rho0 = cfg.section("simulate")["initial_intensity"]
    if pair.a_plus.is_zero:
        return pure_death_envelope(rho0, k2_sup0, pair.m), {"case": "pure_death"}
    if cert is None:
        return None, {"case": "uncertified"}
    if pair.m <= pair.mass_plus:
        delta = bd["delta"] if bd["delta"] is not None else _default_delta(pair, cert.b)
        const = theorem2_constants(pair, cert, bd["k0_sup_root"], delta)
        return growth_envelope(const.C, pair.mass_plus, delta), {"case": "growth", "C": const.C, "delta": delta}
    eps = bd["epsilon"] if bd["epsilon"] is not None else 0.5 * (pair.m - pair.mass_plus)
    const = theorem2_constants(pair, cert, bd["k0_sup_root"], eps)
    return extinction_envelope(const.C, eps), {
        "case": "extinction", "C": const.C, "epsilon": eps, "theta_eps": const.theta_eps,
    }


def bounds_summary(cfg: ExperimentConfig, cert: StabilityCertificate | None = None) -> dict:
    """Every closed-form constant for the configured pair and scale."""
    pair = cfg.pair
    bd = cfg.section("bounds")
    cert = certify(pair, cfg.section("stability")["b"]) if cert is None else cert
    b = 0.0 if cert is None else cert.b
    scale = ScalePair(bd["alpha1"], bd["alpha2"], bd["variant"])
    T = time_horizon(scale, pair, b)
    a1, a2, bb = a_norm_bounds(scale, pair)
    out = {
        "mass_plus": pair.mass_plus,
        "mass_minus": pair.mass_minus,
        "sup_plus": pair.a_plus.sup_norm(),
        "sup_minus": pair.a_minus.sup_norm(),
        "theta": None if cert is None else cert.theta,
        "b": b,
        "beta": beta(scale.alpha2, pair, b, scale.variant),
        "T": T,
        "q_norm_at_half_T": None if math.isinf(T) else q_norm_bound(T / 2, scale, pair, b),
        "A1_bound": a1,
        "A2_bound": a2,
        "B_bound": bb,
    }
    env, info = envelope_for(cfg, pair, cert, bd["k0_sup_root"] ** 2)
    out["envelope"] = None if env is None else env.name
    for key in ("C", "delta", "epsilon", "theta_eps"):
        out[key] = info.get(key)
    if info.get("case") == "growth" and math.isfinite(T):
        out["alpha_T"] = alpha_horizon(info["C"], info["delta"], pair, T)
    return out


def monotone_records(label: str, times, values, stderr=None, cushion: float = 3.0) -> list:
    """Check that ``values`` never decrease; a drop within ``cushion`` stderr is inconclusive."""
    values = np.asarray(values, dtype=float)
    se = np.zeros_like(values) if stderr is None else np.asarray(stderr, dtype=float)
    out = []
    for j in range(1, len(values)):
        prev, cur = values[j - 1], values[j]
        noise = cushion * math.hypot(se[j - 1], se[j])
        if cur >= prev:
            status = "pass"
        elif cur + noise >= prev:
            status = "inconclusive"
        else:
            status = "fail"
        out.append(LedgerRecord(label, float(times[j]), float(prev), float(cur), float(cur - prev), status, "monotone"))
    return out


def _cluster_series(hist: PairHistogram, rho, rho_se, r0: float):
    ci = cluster_index(hist, rho, r0)
    mask = hist.edges[1:] <= r0 * (1 + 1e-12)
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = hist.k2[:, mask] / rho[:, None] ** 2
        arg = np.argmax(ratio, axis=1)
        k2_top = hist.k2[:, mask][np.arange(len(arg)), arg]
        k2_se = hist.stderr[:, mask][np.arange(len(arg)), arg]
        # delta-method error of k2 / rho^2
        se = ci * np.hypot(k2_se / k2_top, 2 * np.asarray(rho_se) / rho)
    return ci, np.nan_to_num(se)


@dataclass
class CompareResult:
    simulation: SimulationResult
    trajectory: HierarchyTrajectory
    hier_hist: PairHistogram
    ledger: BoundLedger
    envelope_info: dict
    certificate: StabilityCertificate | None
    negative_controls: set = field(default_factory=set)
    contact: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(r.status != "fail" for r in self.ledger.records if r.check.split(":")[0] not in self.negative_controls)


def compare(cfg: ExperimentConfig, workers: int | None = None, cushion: float = 3.0) -> CompareResult:
    """Simulate and integrate the same config and check both against the envelopes.

    With ``[compare] contact_control`` the competition kernel is also removed
    to give the contact model: its cluster index must grow, and the
    competition model's envelope applied to it is a negative control.
    """
    pair = cfg.pair
    sim = simulate(cfg, workers=workers)
    traj = hierarchy(cfg)
    edges = linear_bins(cfg.L, cfg.section("simulate")["bins"])
    hh = hierarchy_histogram(traj, edges)
    cert = certify(pair, cfg.section("stability")["b"])
    k2_sup0 = float(np.max(traj.k2[0]))
    env, info = envelope_for(cfg, pair, cert, k2_sup0)
    ledger = BoundLedger(values=dict(info))
    negative = set()
    if env is not None:
        ledger.extend(check_envelope(Observed.from_simulation(sim.density, sim.pairs), env, "sim", cushion))
        ledger.extend(check_envelope(Observed(traj.times, traj.rho, [h for h in hh.k2], source="hierarchy"), env, "hierarchy", cushion))
    contact = {}
    if cfg.section("compare")["contact_control"]:
        r0 = cfg.section("compare")["r0"]
        contact_pair = replace(pair, a_minus=zero_kernel(cfg.d))
        csim = simulate(cfg, pair=contact_pair, workers=workers)
        ctraj = hierarchy(cfg, pair=contact_pair)
        chh = hierarchy_histogram(ctraj, edges)
        ci, ci_se = _cluster_series(csim.pairs, csim.density.rho, csim.density.stderr, r0)
        hci = cluster_index(chh, ctraj.rho, r0)
        ledger.extend(monotone_records("contact_sim:cluster_index", csim.density.times, ci, ci_se, cushion))
        ledger.extend(monotone_records("contact_hierarchy:cluster_index", ctraj.times, hci))
        if env is not None:
            negative.add("negative_control")
            ledger.extend(check_envelope(
                Observed.from_simulation(csim.density, csim.pairs), env, "negative_control", cushion, negative_control=True,
            ))
        comp_ci, _ = _cluster_series(sim.pairs, sim.density.rho, sim.density.stderr, r0)
        contact = {
            "simulation": csim, "trajectory": ctraj, "cluster_index": ci, "cluster_index_stderr": ci_se,
            "hierarchy_cluster_index": hci, "competition_cluster_index": comp_ci,
        }
    return CompareResult(sim, traj, hh, ledger, info, cert, negative, contact)
