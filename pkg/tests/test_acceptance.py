"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from bdlp import pipeline
from bdlp.bounds import (
    Observed,
    ScalePair,
    a_norm_bounds,
    alpha_horizon,
    beta,
    check_envelope,
    convergence_terms,
    extinction_envelope,
    power_exp_bound_holds,
    q_norm_bound,
    theorem2_constants,
    time_horizon,
)
from bdlp.config import parse_string
from bdlp.hierarchy import (
    Closure,
    Grid,
    TruncatedCorrelation,
    convolve,
    convolve_direct,
    integrate,
    rhs_order1,
    rhs_order2,
    sample_kernel,
)
from bdlp.kernels import Gaussian, KernelPair, TopHat, zero_kernel
from bdlp.simulator import (
    Domain,
    PoissonIntensity,
    RunConfig,
    init,
    run_ensemble,
    step,
)
from bdlp.stability import StabilityCertificate, finite_range_theta, gaussian_theta, verify_bruteforce
from bdlp.statistics import density_estimate


def report(name: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def ensemble_density(pair, L, d, kappa, t_end, every, replicas, seed):
    cfg = RunConfig(t_end=t_end, observe_every=every)
    ens = run_ensemble(Domain(d, L), pair, PoissonIntensity(kappa), cfg, replicas, seed)
    return ens, density_estimate(ens, L**d)


def test_criterion_1_contact_moment_law():
    t0 = time.perf_counter()
    pair = KernelPair(zero_kernel(1), TopHat(d=1, c=0.5, radius=1.0), m=0.5)
    _, dens = ensemble_density(pair, 20.0, 1, 5.0, 2.0, 0.25, 400, 20240601)
    expected = 5.0 * np.exp(0.5 * dens.times)
    z = np.abs(dens.rho - expected) / dens.stderr
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(z <= 3.0)) and elapsed < 120
    report("1 contact-model moment law", ok, f"max |z| = {z.max():.2f} over {len(z)} times, {elapsed:.1f}s")
    assert ok


def test_criterion_2_stationary_solution():
    t0 = time.perf_counter()
    theta = 1.0
    a_plus = Gaussian(d=1, c=1.0, sigma=1.0)
    pair = KernelPair(Gaussian(d=1, c=theta, sigma=1.0), a_plus, m=0.0)
    grid = Grid(1, 40.0, 256)
    state = TruncatedCorrelation(1 / theta, np.full(grid.shape, 1 / theta**2), grid)
    residuals = {}
    for closure in ("poisson", "kirkwood"):
        residuals[closure] = max(abs(rhs_order1(state, pair)), float(np.max(np.abs(rhs_order2(state, pair, closure)))))
    part_a = all(r <= 1e-10 for r in residuals.values())

    _, dens = ensemble_density(pair, 50.0, 1, 1 / theta, 5.0, 0.5, 200, 7001)
    z = np.abs(dens.rho - 1 / theta) / dens.stderr
    part_b = bool(np.all(z <= 3.0))
    elapsed = time.perf_counter() - t0
    ok = part_a and part_b and elapsed < 300
    report(
        "2 stationary solution", ok,
        f"RHS sup poisson={residuals['poisson']:.1e} kirkwood={residuals['kirkwood']:.1e}; "
        f"density max |z| = {z.max():.2f}; {elapsed:.1f}s",
    )
    assert ok


def test_criterion_3_extinction():
    t0 = time.perf_counter()
    top = TopHat(d=1, c=0.25, radius=1.0)  # <a+> = 0.5
    pair = KernelPair(top, top, m=2.0)
    cert = StabilityCertificate(1.0, 0.0, "PointwiseDomination")
    kappa, eps = 1.0, 0.5
    const = theorem2_constants(pair, cert, kappa, eps)
    ens, dens = ensemble_density(pair, 20.0, 1, kappa, 10.0, 0.5, 400, 33)
    env = extinction_envelope(const.C, eps)
    records = check_envelope(Observed(dens.times, dens.rho, rho_stderr=dens.stderr), env, "extinction")
    within = all(r.status in ("pass", "inconclusive") for r in records)
    absorbed = np.mean([tr.snapshots[-1].n == 0 for tr in ens])
    elapsed = time.perf_counter() - t0
    ok = within and absorbed >= 0.99 and elapsed < 120
    report("3 extinction envelope", ok, f"C_eps = {const.C:.4g}, absorbed fraction {absorbed:.3f}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_pure_death():
    t0 = time.perf_counter()
    m, kappa, L = 1.0, 2.0, 20.0
    a_plus = zero_kernel(1)
    comp = KernelPair(TopHat(d=1, c=0.5, radius=1.0), a_plus, m=m, allow_pure_death=True)
    _, dens = ensemble_density(comp, L, 1, kappa, 3.0, 0.25, 400, 404)
    bound = kappa * np.exp(-m * dens.times)
    below = bool(np.all(dens.rho <= bound + 3 * dens.stderr))

    free = KernelPair(zero_kernel(1), a_plus, m=m, allow_pure_death=True)
    _, dens0 = ensemble_density(free, L, 1, kappa, 3.0, 0.25, 400, 406)
    bound0 = kappa * np.exp(-m * dens0.times)
    z = np.abs(dens0.rho - bound0) / np.where(dens0.stderr > 0, dens0.stderr, np.inf)
    equal = bool(np.all(z <= 3.0))
    elapsed = time.perf_counter() - t0
    ok = below and equal
    report("4 pure-death bound", ok, f"competition below bound: {below}; free death max |z| = {z.max():.2f}; {elapsed:.1f}s")
    assert ok


STABILITY_PAIRS = {
    "tophat d=1 r<R": lambda: (KernelPair(TopHat(d=1, c=2.0, radius=0.5), TopHat(d=1, c=1.0, radius=1.0)), "finite", 1.0),
    "tophat d=2 r<R": lambda: (KernelPair(TopHat(d=2, c=1.0, radius=0.5), TopHat(d=2, c=1.0, radius=1.0)), "finite", 0.5),
    "tophat d=2 r>=R": lambda: (KernelPair(TopHat(d=2, c=1.0, radius=1.5), TopHat(d=2, c=2.0, radius=1.0)), "finite", 0.0),
    "gaussian d=1 narrow competition": lambda: (KernelPair(Gaussian(d=1, c=1.0, sigma=0.5), Gaussian(d=1, c=1.0, sigma=1.0)), "gauss", 0.05),
    "gaussian d=2 narrow competition": lambda: (KernelPair(Gaussian(d=2, c=2.0, sigma=0.7), Gaussian(d=2, c=1.0, sigma=1.0)), "gauss", 0.5),
    "gaussian d=1 wide competition": lambda: (KernelPair(Gaussian(d=1, c=1.0, sigma=2.0), Gaussian(d=1, c=1.0, sigma=1.0)), "gauss", 0.0),
}


@pytest.mark.parametrize("name", list(STABILITY_PAIRS))
def test_criterion_5_stability_certificates(name):
    pair, kind, b = STABILITY_PAIRS[name]()
    t0 = time.perf_counter()
    cert = finite_range_theta(pair, b) if kind == "finite" else gaussian_theta(pair, b)
    res = verify_bruteforce(pair, cert.theta, cert.b, n_max=6, trials=10_000, rng_seed=5)
    neg = verify_bruteforce(pair, 10 * cert.theta, cert.b, n_max=6, trials=10_000, rng_seed=5)
    elapsed = time.perf_counter() - t0
    ok = res.min_U >= -1e-9 and neg.violated and elapsed < 60
    report(
        f"5 stability certificate [{name}]", ok,
        f"{cert.source} theta={cert.theta:.4g} b={cert.b:.4g}: min U = {res.min_U:.3g}; "
        f"10x theta min U = {neg.min_U:.3g}; {elapsed:.1f}s",
    )
    assert ok


def test_criterion_6_closed_form_ledger():
    rel = lambda a, b: abs(a - b) <= 1e-12 * abs(b)
    e = math.e
    one = TopHat(d=1, c=0.5, radius=1.0)
    pair = KernelPair(one, one, m=0.0)
    checks = {}
    scale = ScalePair(0.0, 1.0)
    checks["beta B_full"] = rel(beta(1.0, pair, 0.0), 1 + e)
    checks["beta B_pos"] = rel(beta(0.0, pair, 0.0, "B_pos"), 1.0)
    checks["T = 1/(1+e)"] = rel(time_horizon(scale, pair, 0.0), 1 / (1 + e))
    T = 1 / (1 + e)
    checks["q(T/2) = 2"] = rel(q_norm_bound(T / 2, scale, pair, 0.0), 2.0)
    unit_sup = KernelPair(TopHat(d=1, c=1.0, radius=0.5), one, m=0.0)
    a1, a2, bb = a_norm_bounds(scale, unit_sup)
    checks["A1 = 4/e^2"] = rel(a1, 4 / e**2)
    checks["A2 = 2/e^2"] = rel(a2, 4 * 0.5 / e**2)
    checks["B = 2/e"] = rel(bb, 2 / e)
    terms, _ = convergence_terms(5, 0.5, 1.0)
    checks["c_1 = 0.5/e"] = rel(terms[0], 0.5 / e)
    checks["c_2 = 0.5 (2/e)^2 / 4"] = rel(terms[1], 0.5 * (2 / e) ** 2 * 0.25)
    cert2 = StabilityCertificate(2.0, 0.0, "PointwiseDomination")
    grow = KernelPair(one, one, m=0.7)
    checks["C_delta"] = rel(theorem2_constants(grow, cert2, 0.5, 0.7).C, 0.5)
    sub = KernelPair(TopHat(d=1, c=0.25, radius=1.0), TopHat(d=1, c=0.25, radius=1.0), m=2.0)
    ext = theorem2_constants(sub, StabilityCertificate(1.0, 0.0, "PointwiseDomination"), 0.3, 0.5)
    checks["theta_eps = 0.625"] = rel(ext.theta_eps, 0.625)
    checks["C_eps = 1.6"] = rel(ext.C, 1.6)
    checks["alpha_T = 2"] = rel(alpha_horizon(1.0, 0.0, pair, 2.0), 2.0)
    checks["power-exp inequality"] = power_exp_bound_holds(1000, (1, 2))
    ok = all(checks.values())
    bad = [k for k, v in checks.items() if not v]
    report("6 closed-form ledger", ok, f"{len(checks) - len(bad)}/{len(checks)} values match" + (f"; mismatched {bad}" if bad else ""))
    assert ok


CLUSTER_CONFIG = """
seed = 3
m = 1.0
[domain]
d = 1
L = 40.0
[kernels.competition]
type = "tophat"
c = 0.5
radius = 1.0
[kernels.dispersal]
type = "tophat"
c = 0.5
radius = 1.0
[simulate]
t_end = 3.0
observe_every = 0.5
replicas = 300
initial_intensity = 0.5
bins = 80
[hierarchy]
grid_points = 512
dt = 0.02
[compare]
contact_control = true
r0 = 1.0
"""


def test_criterion_7_clustering_suppression():
    cfg = parse_string(CLUSTER_CONFIG)
    res = pipeline.compare(cfg)
    recs = res.ledger.records
    contact = [r for r in recs if r.check.startswith("contact_")]
    competition = [r for r in recs if r.check.split(":")[0] in ("sim", "hierarchy") and r.time <= 3.0]
    controls = [r.status for r in recs if r.check.startswith("negative_control")]
    grows = bool(contact) and all(r.status != "fail" for r in contact)
    grows_strict = all(r.status == "pass" for r in contact if r.check.startswith("contact_hierarchy"))
    bounded = bool(competition) and all(r.status != "fail" for r in competition)
    ci = res.contact["cluster_index"]
    ok = grows and grows_strict and bounded and res.ok
    report(
        "7 clustering suppression", ok,
        f"contact cluster index {ci[0]:.2f} -> {ci[-1]:.2f} (monotone: {grows}); "
        f"competition within envelope C={res.envelope_info['C']:.3g}: {bounded}; "
        f"negative control statuses {sorted(set(controls))}",
    )
    assert ok


def test_criterion_8_numerics_hygiene():
    details, flags = [], []

    # RK4 order on a smooth nonlinear problem
    grid = Grid(1, 20.0, 64)
    pair = KernelPair(Gaussian(d=1, c=0.6, sigma=0.8), Gaussian(d=1, c=1.0, sigma=1.2), m=0.3)
    s0 = TruncatedCorrelation.poisson(1.0, grid)
    ref = integrate(s0, pair, "kirkwood", t_end=1.0, dt=1 / 1280)
    errs = []
    for dt in (0.1, 0.05, 0.025):
        tr = integrate(s0, pair, "kirkwood", t_end=1.0, dt=dt)
        errs.append(max(abs(tr.rho[-1] - ref.rho[-1]), float(np.max(np.abs(tr.k2[-1] - ref.k2[-1])))))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    flags.append(bool(np.all(np.abs(slopes - 4) <= 0.3)))
    details.append(f"RK4 slopes {np.round(slopes, 3).tolist()}")

    # spectral vs direct convolution
    worst = 0.0
    rng = np.random.default_rng(8)
    for d in (1, 2):
        g = Grid(d, 5.0, 16)
        f = rng.random(g.shape)
        k = sample_kernel(Gaussian(d=d, c=1.0, sigma=0.6), g)
        worst = max(worst, float(np.max(np.abs(convolve(f, k, g) - convolve_direct(f, k, g)))))
    flags.append(worst <= 1e-10)
    details.append(f"convolution diff {worst:.1e}")

    # rate-cache coherence
    sim_pair = KernelPair(TopHat(d=2, c=0.05, radius=1.0), Gaussian(d=2, c=1.0, sigma=0.7), m=0.2)
    state = init(Domain(2, 12.0), sim_pair, PoissonIntensity(3.0), seed=1)
    rng = np.random.default_rng(2)
    for _ in range(10_000):
        step(state, rng)
    exact = state.brute_force_death_rates()
    cached = state.death_rates[: state.n]
    coherence = float(np.max(np.abs(cached - exact)))
    flags.append(coherence <= 1e-9)
    details.append(f"rate cache diff {coherence:.1e} after 1e4 events (N={state.n})")

    # fixed-seed reproducibility
    cfg = RunConfig(t_end=1.0, observe_every=0.25, keep_points=True)
    a = run_ensemble(Domain(2, 12.0), sim_pair, PoissonIntensity(1.0), cfg, 3, 99)
    b = run_ensemble(Domain(2, 12.0), sim_pair, PoissonIntensity(1.0), cfg, 3, 99)
    same = all(
        np.array_equal(sa.points, sb.points) and sa.time == sb.time
        for ta, tb in zip(a, b) for sa, sb in zip(ta.snapshots, tb.snapshots)
    )
    flags.append(same)
    details.append(f"bit-reproducible {same}")
    ok = all(flags)
    report("8 numerics hygiene", ok, "; ".join(details))
    assert ok
