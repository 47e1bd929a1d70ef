"""Second-order truncation of the correlation-function hierarchy.

For a translation-invariant state the first two correlation functions reduce
to a density ``rho`` and a pair function ``k2(x)`` of the displacement.  Their
evolution on a periodic grid is

    d rho / dt = (<a+> - m) rho - int a-(y) k2(y) dy
    d k2(x)/dt = -2 (m + a-(x)) k2(x) - 2 int a-(y) k3(0, x, y) dy
                 + 2 a+(x) rho + 2 (a+ * k2)(x)

where k3 is supplied by a closure.  Convolutions are periodic and evaluated
with FFTs; the grid matches the simulator's torus.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel, KernelPair

log = logging.getLogger(__name__)

CLOSURES = ("poisson", "kirkwood")


class HierarchyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    d: int
    L: float
    n: int

    def __post_init__(self):
        if self.n < 2 or self.d < 1:
            raise ValueError("grid needs d >= 1 and at least 2 points per axis")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    def axis(self) -> np.ndarray:
        """Signed displacement of each index, wrapped into [-L/2, L/2)."""
        i = np.arange(self.n)
        return ((i + self.n // 2) % self.n - self.n // 2) * self.h

    def displacements(self) -> np.ndarray:
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def radii(self) -> np.ndarray:
        return np.sqrt(np.sum(self.displacements() ** 2, axis=-1))

    def integrate(self, f) -> float:
        return float(np.sum(f) * self.cell_volume)


def sample_kernel(kernel: Kernel, grid: Grid, normalise: bool = True) -> np.ndarray:
    """Kernel values on the grid under the torus wrapping rule.

    With ``normalise`` the samples are rescaled so their grid quadrature equals
    the exact mass <a>; this keeps the density equation consistent with the
    simulator's birth rate <a+> N.
    """
    vals = np.asarray(kernel.torus_eval(grid.displacements(), grid.L), dtype=float)
    if normalise:
        mass = grid.integrate(vals)
        if mass > 0:
            vals = vals * (kernel.l1_norm() / mass)
    return vals


def convolve(f, g, grid: Grid) -> np.ndarray:
    """Periodic convolution (f * g)(x) = int f(y) g(x - y) dy on the grid."""
    if isinstance(g, Kernel):
        g = sample_kernel(g, grid)
    out = np.fft.ifftn(np.fft.fftn(f) * np.fft.fftn(g)).real
    return out * grid.cell_volume


def convolve_direct(f, g, grid: Grid) -> np.ndarray:
    """O(n^2) reference for :func:`convolve`."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    out = np.zeros(grid.shape)
    for i in np.ndindex(*grid.shape):
        acc = 0.0
        for j in np.ndindex(*grid.shape):
            acc += f[j] * g[tuple((a - b) % grid.n for a, b in zip(i, j))]
        out[i] = acc
    return out * grid.cell_volume


@dataclass
class TruncatedCorrelation:
    rho: float
    k2: np.ndarray
    grid: Grid

    def copy(self) -> "TruncatedCorrelation":
        return TruncatedCorrelation(float(self.rho), np.array(self.k2, copy=True), self.grid)

    @classmethod
    def poisson(cls, kappa: float, grid: Grid) -> "TruncatedCorrelation":
        return cls(float(kappa), np.full(grid.shape, float(kappa) ** 2), grid)

    def radial_profile(self):
        """(r, mean k2 at r) over distinct grid distances."""
        r = np.round(self.grid.radii().ravel(), 12)
        uniq, inv = np.unique(r, return_inverse=True)
        sums = np.bincount(inv, weights=self.k2.ravel())
        return uniq, sums / np.bincount(inv)


@dataclass(frozen=True)
class Closure:
    kind: str = "poisson"

    def __post_init__(self):
        if self.kind not in CLOSURES:
            raise ValueError(f"unknown closure {self.kind!r}; choose one of {CLOSURES}")

    def competition_term(self, rho: float, k2, a_minus, grid: Grid) -> np.ndarray:
        """int a-(y) k3(0, x, y) dy as a grid function of x."""
        if self.kind == "poisson":
            return np.full(grid.shape, rho**3 * grid.integrate(a_minus))
        if rho <= 0:
            raise HierarchyError("Kirkwood closure is degenerate at rho = 0")
        return k2 * convolve(a_minus * k2, k2, grid) / rho**3


class _Operator:
    """Sampled kernels and constants reused across RHS evaluations."""

    def __init__(self, pair: KernelPair, grid: Grid, closure: Closure):
        if pair.d != grid.d:
            raise ValueError("kernel and grid dimensions differ")
        self.grid = grid
        self.closure = closure
        self.m = pair.m
        self.a_minus = sample_kernel(pair.a_minus, grid)
        self.a_plus = sample_kernel(pair.a_plus, grid)
        self.mass_plus = pair.a_plus.l1_norm()
        self._a_plus_hat = np.fft.fftn(self.a_plus)

    def order1(self, rho: float, k2) -> float:
        return (self.mass_plus - self.m) * rho - self.grid.integrate(self.a_minus * k2)

    def order2(self, rho: float, k2) -> np.ndarray:
        conv_plus = np.fft.ifftn(self._a_plus_hat * np.fft.fftn(k2)).real * self.grid.cell_volume
        comp = self.closure.competition_term(rho, k2, self.a_minus, self.grid)
        return (
            -2.0 * (self.m + self.a_minus) * k2
            - 2.0 * comp
            + 2.0 * self.a_plus * rho
            + 2.0 * conv_plus
        )


def rhs_order1(state: TruncatedCorrelation, pair: KernelPair) -> float:
    """d rho / dt for the truncated hierarchy."""
    return _Operator(pair, state.grid, Closure()).order1(state.rho, state.k2)


def rhs_order2(state: TruncatedCorrelation, pair: KernelPair, closure: Closure | str = "poisson") -> np.ndarray:
    """d k2 / dt on the grid."""
    closure = closure if isinstance(closure, Closure) else Closure(closure)
    return _Operator(pair, state.grid, closure).order2(state.rho, state.k2)


@dataclass
class HierarchyTrajectory:
    times: np.ndarray
    rho: np.ndarray
    k2: list
    grid: Grid
    dt: float
    clip_count: int = 0
    clip_mass: float = 0.0
    valid: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def k2_sup(self) -> np.ndarray:
        return np.array([np.max(k) for k in self.k2])

    def state(self, i: int) -> TruncatedCorrelation:
        return TruncatedCorrelation(float(self.rho[i]), self.k2[i], self.grid)


def stable_dt(state: TruncatedCorrelation, pair: KernelPair) -> float:
    """Step-size heuristic 0.1 / max(m + <a-> rho0, <a+>)."""
    scale = max(pair.m + pair.a_minus.l1_norm() * state.rho, pair.a_plus.l1_norm())
    return math.inf if scale <= 0 else 0.1 / scale


def _rk4(op: _Operator, rho: float, k2: np.ndarray, dt: float):
    r1, q1 = op.order1(rho, k2), op.order2(rho, k2)
    r2, q2 = op.order1(rho + 0.5 * dt * r1, k2 + 0.5 * dt * q1), op.order2(rho + 0.5 * dt * r1, k2 + 0.5 * dt * q1)
    r3, q3 = op.order1(rho + 0.5 * dt * r2, k2 + 0.5 * dt * q2), op.order2(rho + 0.5 * dt * r2, k2 + 0.5 * dt * q2)
    r4, q4 = op.order1(rho + dt * r3, k2 + dt * q3), op.order2(rho + dt * r3, k2 + dt * q3)
    rho_new = rho + dt / 6.0 * (r1 + 2 * r2 + 2 * r3 + r4)
    k2_new = k2 + dt / 6.0 * (q1 + 2 * q2 + 2 * q3 + q4)
    return rho_new, k2_new


def _integrate_once(state0, op: _Operator, t_end: float, dt: float, observe_every: float | None):
    grid = state0.grid
    every = observe_every or (t_end if t_end > 0 else 1.0)
    n_obs = int(math.floor(t_end / every + 1e-9)) if t_end > 0 else 0
    obs = [every * k for k in range(n_obs + 1)]
    if t_end > 0 and obs[-1] < t_end - 1e-12:
        obs.append(t_end)
    rho, k2 = float(state0.rho), np.array(state0.k2, dtype=float)
    times, rhos, k2s = [0.0], [rho], [k2.copy()]
    clip_count, clip_mass, peak_mass = 0, 0.0, grid.integrate(np.abs(k2))
    t = 0.0
    for t_obs in obs[1:]:
        n_sub = max(1, int(math.ceil((t_obs - t) / dt - 1e-9)))
        h = (t_obs - t) / n_sub
        for _ in range(n_sub):
            rho, k2 = _rk4(op, rho, k2, h)
            if not (math.isfinite(rho) and np.all(np.isfinite(k2))):
                raise HierarchyError(f"non-finite state at t = {t:.6g}; reduce dt")
            neg = k2 < 0
            if np.any(neg):
                clip_count += int(neg.sum())
                clip_mass += grid.integrate(-k2[neg])
                k2[neg] = 0.0
            if rho < 0:
                clip_count += 1
                rho = 0.0
            t += h
        t = t_obs
        times.append(t_obs)
        rhos.append(rho)
        k2s.append(k2.copy())
        peak_mass = max(peak_mass, grid.integrate(k2))
    valid = clip_mass <= 1e-6 * max(peak_mass, 1e-300) or clip_mass == 0.0
    if clip_count:
        log.warning("clipped %d negative k2 values (mass %.3g)", clip_count, clip_mass)
    return HierarchyTrajectory(
        np.array(times), np.array(rhos), k2s, grid, dt, clip_count, clip_mass, valid
    )


def integrate(
    state0: TruncatedCorrelation,
    pair: KernelPair,
    closure: Closure | str = "poisson",
    t_end: float = 1.0,
    dt: float = 0.01,
    observe_every: float | None = None,
    rtol: float | None = None,
    max_halvings: int = 12,
) -> HierarchyTrajectory:
    """Classical RK4 integration from ``state0`` up to ``t_end``.

    States are returned at multiples of ``observe_every`` (and at ``t_end``).
    Each observation interval is split into equal steps no longer than ``dt``.
    With ``rtol`` the step is halved until two successive refinements agree
    to ``rtol`` (relative, sup over the observed states).
    """
    closure = closure if isinstance(closure, Closure) else Closure(closure)
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = stable_dt(state0, pair)
    if dt > limit:
        log.warning("dt = %.3g exceeds the stability heuristic %.3g", dt, limit)
    op = _Operator(pair, state0.grid, closure)
    traj = _integrate_once(state0, op, t_end, dt, observe_every)
    if rtol is None:
        return traj
    for _ in range(max_halvings):
        dt /= 2
        finer = _integrate_once(state0, op, t_end, dt, observe_every)
        diff = _relative_difference(traj, finer)
        traj = finer
        if diff < rtol:
            traj.diagnostics["refinement_difference"] = diff
            return traj
    raise HierarchyError(f"step halving did not reach rtol = {rtol} (last difference {diff:.3g})")


def _relative_difference(a: HierarchyTrajectory, b: HierarchyTrajectory) -> float:
    scale_rho = max(np.max(np.abs(b.rho)), 1e-300)
    scale_k2 = max(max(np.max(np.abs(k)) for k in b.k2), 1e-300)
    d_rho = np.max(np.abs(a.rho - b.rho)) / scale_rho
    d_k2 = max(np.max(np.abs(x - y)) for x, y in zip(a.k2, b.k2)) / scale_k2
    return float(max(d_rho, d_k2))
