"""Exact event-driven simulation of the birth-death-competition process on a torus.

Each point x dies at rate m + E^-(x, gamma minus x) and every point spawns
offspring at total rate <a^+>, the child being displaced from its parent by a
draw from a^+ / <a^+>.  Summed over parents this places births with intensity
E^+(y, gamma), so the jump chain below is the exact process restricted to the
torus [0, L)^d.

Death rates are cached per point and updated incrementally through a cell
list; victims are chosen by a cumulative-sum search for small populations and
by a Fenwick tree above ``FENWICK_THRESHOLD`` points.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    Gaussian,
    Kernel,
    KernelError,
    KernelPair,
    TabulatedRadial,
    TopHat,
    torus_displacement,
)

log = logging.getLogger(__name__)

FENWICK_THRESHOLD = 4096
REFRESH_EVERY = 1_000_000
DEFAULT_MAX_POINTS = 1_000_000
# Gaussian competition is cut off at this many sigmas inside the cell list
GAUSSIAN_CUTOFF_SIGMAS = 8.0


class ConfigurationError(ValueError):
    pass


# -- domain ------------------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    d: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if not self.L > 0:
            raise ConfigurationError("torus edge L must be positive")

    @property
    def volume(self) -> float:
        return self.L**self.d

    def distance(self, x, y) -> np.ndarray:
        disp = torus_displacement(np.asarray(x) - np.asarray(y), self.L)
        return np.sqrt(np.sum(disp * disp, axis=-1))


# -- dispersal sampling ------------------------------------------------------

_inverse_cdf_cache: dict = {}


def _tabulated_inverse_cdf(k: TabulatedRadial):
    key = (k.d, k.radii, k.values)
    if key not in _inverse_cdf_cache:
        fine, dens = k._fine_grid()
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(fine))])
        if cdf[-1] <= 0:
            raise KernelError("cannot sample from a table with zero mass")
        _inverse_cdf_cache[key] = (cdf / cdf[-1], fine)
    return _inverse_cdf_cache[key]


def _random_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    if d == 1:
        return rng.choice((-1.0, 1.0), size=(n, 1))
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_dispersal(kernel: Kernel, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw displacements with density a^+ / <a^+>.  Shape (size, d), or (d,) when size is None."""
    n = 1 if size is None else int(size)
    d = kernel.d
    if kernel.l1_norm() <= 0:
        raise KernelError("dispersal kernel has zero mass; no births can occur")
    if isinstance(kernel, Gaussian):
        out = rng.normal(0.0, kernel.sigma, size=(n, d))
    elif isinstance(kernel, TopHat):
        radius = kernel.radius * rng.random(n) ** (1.0 / d)
        out = _random_directions(rng, n, d) * radius[:, None]
    elif isinstance(kernel, TabulatedRadial):
        cdf, fine = _tabulated_inverse_cdf(kernel)
        radius = np.interp(rng.random(n), cdf, fine)
        out = _random_directions(rng, n, d) * radius[:, None]
    else:
        raise KernelError(f"no sampler for {type(kernel).__name__}")
    return out[0] if size is None else out


# -- Fenwick tree for O(log N) victim selection -----------------------------

class FenwickTree:
    """Binary-indexed tree of nonnegative weights."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        self.n = len(w)
        self.size = 1 << max(1, int(math.ceil(math.log2(max(self.n, 2)))))
        tree = np.zeros(self.size + 1)
        tree[1 : self.n + 1] = w
        for i in range(1, self.size + 1):
            j = i + (i & -i)
            if j <= self.size:
                tree[j] += tree[i]
        self.tree = tree

    def add(self, i: int, delta: float) -> None:
        i += 1
        tree = self.tree
        while i <= self.size:
            tree[i] += delta
            i += i & -i

    @property
    def total(self) -> float:
        return float(self.tree[self.size])

    def find(self, u: float) -> int:
        """Smallest index whose prefix sum exceeds ``u``."""
        pos = 0
        step = self.size
        tree = self.tree
        while step:
            nxt = pos + step
            if nxt <= self.size and tree[nxt] <= u:
                pos = nxt
                u -= tree[nxt]
            step >>= 1
        return pos


# -- events ------------------------------------------------------------------

@dataclass(frozen=True)
class Birth:
    time: float
    parent: int
    position: tuple


@dataclass(frozen=True)
class Death:
    time: float
    victim: int


@dataclass(frozen=True)
class Absorbed:
    time: float


# -- simulation state --------------------------------------------------------

class SimState:
    """Point configuration with cell list and cached death rates.

    Points occupy slots ``0..N-1`` of ``positions``; removal swaps the last
    point into the freed slot.
    """

    def __init__(self, domain: Domain, pair: KernelPair, points=None, time: float = 0.0):
        if pair.d != domain.d:
            raise ConfigurationError("kernel dimension differs from domain dimension")
        self.domain = domain
        self.pair = pair
        self.time = float(time)
        self.events = 0
        self.metadata = {
            "a_minus": pair.a_minus.check_torus(domain.L),
            "a_plus": pair.a_plus.check_torus(domain.L),
        }
        self.m = float(pair.m)
        self.birth_rate_per_point = pair.a_plus.l1_norm()
        self._setup_interaction()

        pts = np.zeros((0, domain.d)) if points is None else np.asarray(points, float).reshape(-1, domain.d)
        cap = max(16, 2 * len(pts))
        self.positions = np.zeros((cap, domain.d))
        self.death_rates = np.zeros(cap)
        self.n = len(pts)
        self.positions[: self.n] = np.mod(pts, domain.L)
        self._fenwick: FenwickTree | None = None
        self.rebuild()

    # -- interaction geometry -------------------------------------------
    def _setup_interaction(self):
        k = self.pair.a_minus
        L = self.domain.L
        self.competition_off = k.is_zero
        if isinstance(k, Gaussian):
            r_int = GAUSSIAN_CUTOFF_SIGMAS * k.sigma
        else:
            r_int = k.support_radius
        self.interaction_radius = r_int
        n_cells = int(math.floor(L / r_int)) if r_int > 0 else 0
        self.use_cells = not self.competition_off and r_int < L / 2 and n_cells >= 3
        if self.use_cells:
            n_cells = min(n_cells, 1024 if self.domain.d == 1 else 128 if self.domain.d == 2 else 32)
            self.n_cells = n_cells
            self.cell_size = L / n_cells
            self._strides = np.array([n_cells**a for a in range(self.domain.d)])
            self._neighbour_cache: dict[int, tuple] = {}
            self.metadata["interaction"] = {
                "mode": "cell-list",
                "cutoff": r_int,
                "cells_per_axis": n_cells,
            }
        else:
            self.n_cells = 0
            self.metadata["interaction"] = {"mode": "none" if self.competition_off else "all-pairs"}

    def pair_values(self, x, others: np.ndarray) -> np.ndarray:
        """a^-(x - y) for each row y of ``others`` under the simulator's torus rule."""
        disp = torus_displacement(others - x, self.domain.L)
        if self.use_cells:
            r = np.sqrt(np.sum(disp * disp, axis=-1))
            vals = self.pair.a_minus.radial(r)
            return np.where(r < self.interaction_radius, vals, 0.0)
        return self.pair.a_minus.torus_eval(disp, self.domain.L)

    def _cell_of(self, x) -> int:
        c = np.floor(np.asarray(x) / self.cell_size).astype(int) % self.n_cells
        return int(np.dot(c, self._strides))

    def _neighbour_cells(self, cell: int) -> tuple:
        nb = self._neighbour_cache.get(cell)
        if nb is None:
            nc = self.n_cells
            coords = [(cell // nc**a) % nc for a in range(self.domain.d)]
            ids = set()
            for off in itertools.product((-1, 0, 1), repeat=self.domain.d):
                ids.add(sum(((c + o) % nc) * nc**a for a, (c, o) in enumerate(zip(coords, off))))
            nb = tuple(sorted(ids))
            self._neighbour_cache[cell] = nb
        return nb

    def neighbours(self, x, exclude: int = -1) -> np.ndarray:
        """Indices of candidate interaction partners of position ``x``."""
        if self.use_cells:
            cells = self.cells
            idx = [j for c in self._neighbour_cells(self._cell_of(x)) for j in cells.get(c, ())]
            out = np.fromiter(idx, dtype=np.int64, count=len(idx))
        else:
            out = np.arange(self.n)
        if exclude >= 0:
            out = out[out != exclude]
        return out

    # -- caches -----------------------------------------------------------
    def rebuild(self) -> None:
        """Recompute cell index, death rates and selection tree from scratch."""
        if self.use_cells:
            self.cells: dict[int, set] = {}
            self.cell_id = np.zeros(len(self.positions), dtype=np.int64)
            for i in range(self.n):
                c = self._cell_of(self.positions[i])
                self.cell_id[i] = c
                self.cells.setdefault(c, set()).add(i)
        self.death_rates[: self.n] = self.brute_force_death_rates() if not self.use_cells else self._cell_rates()
        self._fenwick = None
        self._sync_fenwick()

    def _cell_rates(self) -> np.ndarray:
        rates = np.full(self.n, self.m)
        for i in range(self.n):
            nb = self.neighbours(self.positions[i], exclude=i)
            if len(nb):
                rates[i] += self.pair_values(self.positions[i], self.positions[nb]).sum()
        return rates

    def brute_force_death_rates(self) -> np.ndarray:
        """O(N^2) recomputation of m + E^-(x, gamma minus x) for every point."""
        n = self.n
        rates = np.full(n, self.m)
        if self.competition_off or n < 2:
            return rates
        pts = self.positions[:n]
        for start in range(0, n, 512):
            block = pts[start : start + 512]
            disp = torus_displacement(pts[None, :, :] - block[:, None, :], self.domain.L)
            if self.use_cells:
                r = np.sqrt(np.sum(disp * disp, axis=-1))
                vals = np.where(r < self.interaction_radius, self.pair.a_minus.radial(r), 0.0)
            else:
                vals = self.pair.a_minus.torus_eval(disp, self.domain.L)
            rows = np.arange(len(block))
            vals[rows, start + rows] = 0.0
            rates[start : start + len(block)] += vals.sum(axis=1)
        return rates

    def _sync_fenwick(self) -> None:
        if self.n > FENWICK_THRESHOLD:
            if self._fenwick is None:
                # spare capacity so that insertions do not force a rebuild
                self._fenwick = FenwickTree(np.concatenate([self.death_rates[: self.n], np.zeros(self.n)]))
        else:
            self._fenwick = None

    @property
    def points(self) -> np.ndarray:
        return self.positions[: self.n].copy()

    @property
    def total_death_rate(self) -> float:
        if self._fenwick is not None:
            return self._fenwick.total
        return float(self.death_rates[: self.n].sum())

    @property
    def total_birth_rate(self) -> float:
        return self.birth_rate_per_point * self.n

    # -- mutation ---------------------------------------------------------
    def _set_rate(self, i: int, value: float) -> None:
        if self._fenwick is not None:
            self._fenwick.add(i, value - self.death_rates[i])
        self.death_rates[i] = value

    def _add_rates(self, idx: np.ndarray, delta: np.ndarray) -> None:
        self.death_rates[idx] += delta
        if self._fenwick is not None:
            for i, dv in zip(idx.tolist(), delta.tolist()):
                self._fenwick.add(i, dv)

    def insert(self, y) -> int:
        y = np.mod(np.asarray(y, dtype=float), self.domain.L)
        if self.n == len(self.positions):
            self._grow()
        rate = self.m
        if not self.competition_off and self.n:
            nb = self.neighbours(y)
            if len(nb):
                vals = self.pair_values(y, self.positions[nb])
                self._add_rates(nb, vals)
                rate += float(vals.sum())
        i = self.n
        self.positions[i] = y
        self.n += 1
        tree = self._fenwick
        if tree is not None and i < tree.n:
            tree.add(i, rate)
            self.death_rates[i] = rate
        else:
            self.death_rates[i] = rate
            self._fenwick = None
            self._sync_fenwick()
        if self.use_cells:
            c = self._cell_of(y)
            self.cell_id[i] = c
            self.cells.setdefault(c, set()).add(i)
        return i

    def remove(self, i: int) -> None:
        x = self.positions[i].copy()
        last = self.n - 1
        if self.use_cells:
            self.cells[int(self.cell_id[i])].discard(i)
        if not self.competition_off and self.n > 1:
            nb = self.neighbours(x, exclude=i)
            if len(nb):
                self._add_rates(nb, -self.pair_values(x, self.positions[nb]))
        if i != last:
            self.positions[i] = self.positions[last]
            self._set_rate(i, self.death_rates[last])
            if self.use_cells:
                c = int(self.cell_id[last])
                self.cells[c].discard(last)
                self.cells[c].add(i)
                self.cell_id[i] = c
        self._set_rate(last, 0.0)
        self.n -= 1
        self._sync_fenwick()

    def _grow(self) -> None:
        cap = 2 * len(self.positions)
        pos = np.zeros((cap, self.domain.d))
        pos[: self.n] = self.positions[: self.n]
        rates = np.zeros(cap)
        rates[: self.n] = self.death_rates[: self.n]
        self.positions, self.death_rates = pos, rates
        if self.use_cells:
            ids = np.zeros(cap, dtype=np.int64)
            ids[: self.n] = self.cell_id[: self.n]
            self.cell_id = ids

    def select_victim(self, u: float) -> int:
        """Index i with probability death_rate[i] / total, for u ~ U[0, 1)."""
        if self._fenwick is not None:
            i = self._fenwick.find(u * self._fenwick.total)
        else:
            cs = np.cumsum(self.death_rates[: self.n])
            i = int(np.searchsorted(cs, u * cs[-1], side="right"))
        return min(i, self.n - 1)


# -- public operations -------------------------------------------------------

@dataclass(frozen=True)
class PoissonIntensity:
    kappa: float


def init(domain: Domain, pair: KernelPair, initial, seed=None) -> SimState:
    """Build a state from a Poisson intensity or an explicit point array."""
    try:
        if isinstance(initial, PoissonIntensity):
            rng = np.random.default_rng(seed)
            count = rng.poisson(initial.kappa * domain.volume)
            pts = rng.random((count, domain.d)) * domain.L
        else:
            pts = initial
        return SimState(domain, pair, pts)
    except KernelError as exc:
        raise ConfigurationError(str(exc)) from exc


def _waiting_time(state: SimState, rng: np.random.Generator) -> float:
    total = state.total_death_rate + state.total_birth_rate
    if total <= 0:
        # frozen configuration: no event can ever occur
        return math.inf
    return rng.exponential(1.0 / total)


def _jump(state: SimState, rng: np.random.Generator, t_next: float):
    death_total = state.total_death_rate
    total = death_total + state.total_birth_rate
    state.time = t_next
    state.events += 1
    if state.events % REFRESH_EVERY == 0:
        state.rebuild()
    if rng.random() * total < death_total:
        victim = state.select_victim(rng.random())
        state.remove(victim)
        return Death(t_next, victim)
    parent = int(rng.integers(state.n))
    i = state.insert(state.positions[parent] + sample_dispersal(state.pair.a_plus, rng))
    return Birth(t_next, parent, tuple(state.positions[i]))


def step(state: SimState, rng: np.random.Generator):
    """Advance the state by one jump and return the event.

    The waiting time is exponential with the total rate; the event is a death
    with probability total_death_rate / total, otherwise a birth.
    """
    if state.n == 0:
        return Absorbed(state.time)
    t_next = state.time + _waiting_time(state, rng)
    if math.isinf(t_next):
        state.time = t_next
        return Absorbed(t_next)
    return _jump(state, rng, t_next)


@dataclass
class Snapshot:
    time: float
    n: int
    density: float
    points: np.ndarray | None = None


@dataclass(frozen=True)
class RunConfig:
    t_end: float
    observe_every: float | None = None
    max_points: int = DEFAULT_MAX_POINTS
    keep_points: bool = False

    def observation_times(self) -> np.ndarray:
        if self.t_end <= 0:
            return np.array([0.0])
        every = self.observe_every or self.t_end
        k = int(math.floor(self.t_end / every + 1e-9))
        times = every * np.arange(k + 1)
        if times[-1] < self.t_end - 1e-12:
            times = np.append(times, self.t_end)
        return times


@dataclass
class Trajectory:
    snapshots: list
    status: str  # "completed", "absorbed" or "truncated"
    events: int
    metadata: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def counts(self) -> np.ndarray:
        return np.array([s.n for s in self.snapshots])


def _snapshot(state: SimState, t: float, keep_points: bool) -> Snapshot:
    return Snapshot(
        time=float(t),
        n=state.n,
        density=state.n / state.domain.volume,
        points=state.points if keep_points else None,
    )


def run(state: SimState, config: RunConfig, seed=None) -> Trajectory:
    """Run one replica from ``state`` and record snapshots at observation times.

    The state is mutated.  ``seed`` may be an int, a SeedSequence or a Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    obs = config.observation_times()
    snaps: list[Snapshot] = []
    k = 0
    status = "completed"
    t0 = state.time
    while k < len(obs):
        if state.n == 0:
            status = "absorbed"
            while k < len(obs):
                snaps.append(_snapshot(state, t0 + obs[k], config.keep_points))
                k += 1
            break
        if state.n > config.max_points:
            status = "truncated"
            log.warning("replica truncated at t=%.4g with N=%d > max_points", state.time, state.n)
            break
        # rates are constant between jumps, so every observation time before
        # the next jump sees the current configuration
        t_next = state.time + _waiting_time(state, rng)
        while k < len(obs) and t0 + obs[k] < t_next:
            snaps.append(_snapshot(state, t0 + obs[k], config.keep_points))
            k += 1
        if k >= len(obs):
            state.time = t0 + obs[-1]
            break
        _jump(state, rng, t_next)
    return Trajectory(snaps, status, state.events, dict(state.metadata))


# -- ensembles ---------------------------------------------------------------

def replica_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream for replica ``index``; fixed by (master_seed, index)."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def worker_count(requested: int | None = None) -> int:
    env = os.environ.get("BDLP_THREADS")
    n = requested if requested is not None else (int(env) if env else 1)
    return max(1, n)


def _run_replica(args) -> Trajectory:
    domain, pair, initial, config, master_seed, index = args
    ss = replica_seed(master_seed, index)
    init_seed, run_seed = ss.spawn(2)
    state = init(domain, pair, initial, np.random.default_rng(init_seed))
    traj = run(state, config, np.random.default_rng(run_seed))
    traj.metadata["replica"] = index
    return traj


def run_ensemble(
    domain: Domain,
    pair: KernelPair,
    initial,
    config: RunConfig,
    replicas: int,
    master_seed: int,
    workers: int | None = None,
) -> list[Trajectory]:
    """Run independent replicas; the result does not depend on ``workers``."""
    jobs = [(domain, pair, initial, config, master_seed, i) for i in range(replicas)]
    n_workers = min(worker_count(workers), max(1, replicas))
    if n_workers == 1:
        return [_run_replica(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_run_replica, jobs, chunksize=max(1, replicas // (4 * n_workers))))
