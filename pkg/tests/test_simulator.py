import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bdlp.kernels import Gaussian, KernelPair, TabulatedRadial, TopHat, zero_kernel
from bdlp.simulator import (
    Absorbed,
    Birth,
    ConfigurationError,
    Death,
    Domain,
    FenwickTree,
    PoissonIntensity,
    RunConfig,
    init,
    replica_seed,
    run,
    run_ensemble,
    sample_dispersal,
    step,
)
from bdlp.statistics import density_estimate

DISPERSAL = TopHat(d=1, c=0.5, radius=1.0)


def test_empty_initial_state():
    s = init(Domain(2, 5.0), KernelPair(TopHat(d=2), TopHat(d=2)), PoissonIntensity(0.0), seed=1)
    assert s.n == 0
    assert (s.total_death_rate, s.total_birth_rate) == (0.0, 0.0)
    assert isinstance(step(s, np.random.default_rng(0)), Absorbed)


def test_single_point_rates():
    pair = KernelPair(TopHat(d=1, c=9.0, radius=1.0), Gaussian(d=1, c=2.5, sigma=1.0), m=1.0)
    s = init(Domain(1, 10.0), pair, np.array([[3.0]]))
    assert s.death_rates[: s.n].tolist() == [1.0]
    assert s.total_birth_rate == 2.5


def test_poisson_initial_count():
    counts = [init(Domain(1, 10.0), KernelPair(zero_kernel(1), DISPERSAL), PoissonIntensity(5.0), seed=i).n for i in range(1000)]
    assert abs(np.mean(counts) - 50) <= 3 * math.sqrt(50 / 1000)


def test_oversized_tophat_rejected():
    with pytest.raises(ConfigurationError, match="L/2"):
        init(Domain(1, 4.0), KernelPair(TopHat(d=1, c=1.0, radius=2.0), DISPERSAL), PoissonIntensity(1.0))


def test_dimension_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        init(Domain(2, 4.0), KernelPair(zero_kernel(1), DISPERSAL), PoissonIntensity(1.0))


def test_singleton_lifetime():
    pair = KernelPair(TopHat(d=1, c=1.0, radius=1.0), zero_kernel(1), m=1.0, allow_pure_death=True)
    rng = np.random.default_rng(11)
    lifetimes = []
    for _ in range(10_000):
        s = init(Domain(1, 10.0), pair, np.array([[0.0]]))
        ev = step(s, rng)
        assert isinstance(ev, Death)
        lifetimes.append(ev.time)
    assert abs(np.mean(lifetimes) - 1.0) <= 3 / math.sqrt(len(lifetimes))


def test_two_point_first_event_rate():
    m, u = 0.5, 0.4
    comp = TopHat(d=1, c=0.75, radius=1.0)
    pair = KernelPair(comp, zero_kernel(1), m=m, allow_pure_death=True)
    rate = 2 * m + 2 * 0.75
    rng = np.random.default_rng(5)
    times = [step(init(Domain(1, 10.0), pair, np.array([[0.0], [u]])), rng).time for _ in range(5000)]
    assert abs(np.mean(times) - 1 / rate) <= 3 / rate / math.sqrt(len(times))


def test_yule_growth():
    pair = KernelPair(zero_kernel(1), DISPERSAL, m=0.0)
    cfg = RunConfig(t_end=1.5, observe_every=0.5)
    start = np.linspace(0, 30, 10, endpoint=False)[:, None]
    finals = []
    for i in range(300):
        tr = run(init(Domain(1, 30.0), pair, start), cfg, seed=i)
        finals.append(tr.counts)
    finals = np.array(finals)
    expected = 10 * np.exp(np.array([0, 0.5, 1.0, 1.5]))
    se = finals.std(axis=0, ddof=1) / math.sqrt(len(finals))
    assert np.all(np.abs(finals.mean(axis=0)[1:] - expected[1:]) <= 3 * se[1:])
    assert np.all(finals[:, 0] == 10)


def test_zero_horizon_single_snapshot():
    s = init(Domain(1, 10.0), KernelPair(zero_kernel(1), DISPERSAL), PoissonIntensity(2.0), seed=3)
    tr = run(s, RunConfig(t_end=0.0), seed=1)
    assert len(tr.snapshots) == 1 and tr.snapshots[0].time == 0.0 and tr.snapshots[0].n == s.n


def test_fixed_seed_bit_identical():
    pair = KernelPair(TopHat(d=2, c=0.1, radius=1.0), Gaussian(d=2, c=1.0, sigma=0.5), m=0.3)
    cfg = RunConfig(t_end=2.0, observe_every=0.5, keep_points=True)
    a = run(init(Domain(2, 8.0), pair, PoissonIntensity(1.0), seed=4), cfg, seed=9)
    b = run(init(Domain(2, 8.0), pair, PoissonIntensity(1.0), seed=4), cfg, seed=9)
    assert a.events == b.events
    for sa, sb in zip(a.snapshots, b.snapshots):
        assert np.array_equal(sa.points, sb.points)


def test_subcritical_absorption():
    top = TopHat(d=1, c=0.25, radius=1.0)
    pair = KernelPair(top, top, m=1.0)
    ens = run_ensemble(Domain(1, 20.0), pair, PoissonIntensity(0.1), RunConfig(t_end=10 / 0.5), 300, 17)
    absorbed = np.mean([tr.status == "absorbed" for tr in ens])
    assert absorbed > 0.99


def test_truncation_is_reported():
    pair = KernelPair(zero_kernel(1), TopHat(d=1, c=2.0, radius=1.0), m=0.0)
    tr = run(init(Domain(1, 10.0), pair, PoissonIntensity(2.0), seed=1), RunConfig(t_end=10.0, max_points=100), seed=2)
    assert tr.status == "truncated"
    assert tr.snapshots[-1].time < 10.0


def test_ensemble_independent_of_workers():
    pair = KernelPair(TopHat(d=1, c=0.2, radius=1.0), DISPERSAL, m=0.5)
    cfg = RunConfig(t_end=1.0, observe_every=0.5)
    a = run_ensemble(Domain(1, 10.0), pair, PoissonIntensity(1.0), cfg, 4, 21, workers=1)
    b = run_ensemble(Domain(1, 10.0), pair, PoissonIntensity(1.0), cfg, 4, 21, workers=2)
    assert [t.counts.tolist() for t in a] == [t.counts.tolist() for t in b]


def test_replica_seeds_distinct():
    draws = {np.random.default_rng(replica_seed(5, i)).random() for i in range(100)}
    assert len(draws) == 100


# -- dispersal sampling --------------------------------------------------------

def test_gaussian_dispersal_moments():
    rng = np.random.default_rng(0)
    xs = sample_dispersal(Gaussian(d=2, c=1.0, sigma=0.7), rng, size=100_000)
    n = len(xs)
    assert np.all(np.abs(xs.mean(axis=0)) <= 3 * 0.7 / math.sqrt(n))
    # variance of the sample variance for a normal is 2 sigma^4 / n
    assert np.all(np.abs(xs.var(axis=0) - 0.49) <= 3 * math.sqrt(2 / n) * 0.49)


def test_tophat_dispersal_uniform_radius_d1():
    xs = sample_dispersal(TopHat(d=1, c=1.0, radius=1.5), np.random.default_rng(1), size=20_000)
    assert stats.kstest(np.abs(xs[:, 0]) / 1.5, "uniform").pvalue > 0.01
    assert np.all(np.abs(xs) < 1.5)


@pytest.mark.parametrize("d", [2, 3])
def test_tophat_dispersal_radial_law(d):
    xs = sample_dispersal(TopHat(d=d, c=1.0, radius=2.0), np.random.default_rng(d), size=20_000)
    r = np.linalg.norm(xs, axis=1) / 2.0
    assert stats.kstest(r**d, "uniform").pvalue > 0.01


def test_tabulated_dispersal_chi_square():
    k = TabulatedRadial(d=2, radii=(0.0, 0.5, 1.0), values=(1.0, 1.0, 0.0))
    xs = sample_dispersal(k, np.random.default_rng(4), size=40_000)
    r = np.linalg.norm(xs, axis=1)
    edges = np.linspace(0, 1, 21)
    obs, _ = np.histogram(r, edges)
    # expected bin masses from exact integration of the radial density 2 pi r a(r)
    from scipy.integrate import quad

    mass = np.array([quad(lambda s: 2 * math.pi * s * float(k.radial(s)), a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    expected = mass / mass.sum() * len(r)
    assert stats.chisquare(obs, expected).pvalue > 0.01


# -- caches ---------------------------------------------------------------------

def test_cell_neighbours_match_brute_force():
    pair = KernelPair(TopHat(d=2, c=1.0, radius=1.0), TopHat(d=2, c=1.0, radius=1.0))
    s = init(Domain(2, 10.0), pair, PoissonIntensity(3.0), seed=5)
    assert s.use_cells
    rng = np.random.default_rng(6)
    dom = Domain(2, 10.0)
    for _ in range(1000):
        x = rng.random(2) * 10
        cand = s.neighbours(x)
        close = set(np.nonzero(dom.distance(s.points, x) < 1.0)[0].tolist())
        assert close <= set(cand.tolist())


@settings(max_examples=10)
@given(st.integers(0, 1000))
def test_birth_rate_and_cache_invariants(seed):
    pair = KernelPair(TopHat(d=2, c=0.1, radius=0.8), Gaussian(d=2, c=1.0, sigma=0.5), m=0.4)
    s = init(Domain(2, 6.0), pair, PoissonIntensity(2.0), seed=seed)
    rng = np.random.default_rng(seed + 1)
    for _ in range(300):
        ev = step(s, rng)
        if isinstance(ev, Absorbed):
            break
        assert isinstance(ev, (Birth, Death))
        assert s.total_birth_rate == pytest.approx(pair.mass_plus * s.n, abs=1e-12 * max(s.n, 1))
    assert np.allclose(s.death_rates[: s.n], s.brute_force_death_rates(), rtol=1e-9, atol=1e-12)
    members = sorted(i for c in s.cells.values() for i in c)
    assert members == list(range(s.n))


def test_all_pairs_mode_for_wide_gaussian():
    pair = KernelPair(Gaussian(d=1, c=0.1, sigma=2.0), DISPERSAL, m=0.2)
    s = init(Domain(1, 10.0), pair, PoissonIntensity(2.0), seed=1)
    assert not s.use_cells
    rng = np.random.default_rng(2)
    for _ in range(2000):
        step(s, rng)
    assert np.allclose(s.death_rates[: s.n], s.brute_force_death_rates(), rtol=1e-9)


def test_fenwick_selection_large_population():
    pair = KernelPair(TopHat(d=1, c=0.01, radius=0.5), DISPERSAL, m=0.3)
    s = init(Domain(1, 400.0), pair, PoissonIntensity(15.0), seed=3)
    assert s.n > 4096 and s._fenwick is not None
    rng = np.random.default_rng(4)
    for _ in range(3000):
        step(s, rng)
    assert s.total_death_rate == pytest.approx(s.death_rates[: s.n].sum(), rel=1e-9)
    assert np.allclose(s.death_rates[: s.n], s.brute_force_death_rates(), rtol=1e-9)


@given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=40), st.floats(0.0, 1.0, exclude_max=True))
def test_fenwick_find_matches_cumsum(weights, u):
    w = np.array(weights)
    if w.sum() == 0:
        return
    tree = FenwickTree(w)
    target = u * tree.total
    expected = int(np.searchsorted(np.cumsum(w), target, side="right"))
    got = tree.find(target)
    assert min(got, len(w) - 1) == min(expected, len(w) - 1)


def test_contact_density_law():
    pair = KernelPair(zero_kernel(1), DISPERSAL, m=0.5)
    ens = run_ensemble(Domain(1, 20.0), pair, PoissonIntensity(2.0), RunConfig(t_end=1.0, observe_every=0.5), 200, 3)
    d = density_estimate(ens, 20.0)
    assert np.all(np.abs(d.rho - 2 * np.exp(0.5 * d.times)) <= 3 * d.stderr)
