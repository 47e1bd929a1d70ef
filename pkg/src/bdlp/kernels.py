"""Radial interaction kernels and the energy functionals built from them.

A kernel is a nonnegative, rotation-symmetric function on R^d.  Three shapes
are supported: a flat top-hat, a normalised Gaussian and a radial table with
linear interpolation.  All evaluation routines accept displacement arrays whose
last axis has length ``d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma

__all__ = [
    "Kernel",
    "TopHat",
    "Gaussian",
    "TabulatedRadial",
    "KernelPair",
    "KernelError",
    "zero_kernel",
    "unit_ball_volume",
    "sphere_surface",
    "torus_displacement",
    "interaction_energy",
    "total_energy",
    "death_energy",
    "phi_theta",
]

# images per axis used when wrapping a Gaussian on the torus
GAUSSIAN_IMAGES = (-1, 0, 1)
# subintervals per table interval for radial quadrature / inverse CDF
TABLE_REFINE = 64


class KernelError(ValueError):
    """Raised for malformed kernels or kernels inadmissible on a torus."""


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


def sphere_surface(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d = 1)."""
    return d * unit_ball_volume(d)


def torus_displacement(x, L: float | None):
    """Minimum-image displacement on a torus of edge ``L`` (identity if None)."""
    x = np.asarray(x, dtype=float)
    if L is None:
        return x
    return x - L * np.round(x / L)


def _norm(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.sum(x * x, axis=-1))


@dataclass(frozen=True)
class Kernel:
    """Base class; subclasses implement :meth:`radial`."""

    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise KernelError(f"dimension must be a positive integer, got {self.d}")

    # -- evaluation ---------------------------------------------------------
    def radial(self, r) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, L: float | None = None):
        """Evaluate a(x) for displacement(s) ``x``.

        With ``L`` given, the displacement is taken on the torus: Gaussians are
        summed over the nearest three images per axis, compact kernels use the
        minimum image.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or (self.d == 1 and x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self.d:
            raise KernelError(f"displacement has dimension {x.shape[-1]}, kernel has d={self.d}")
        if L is None:
            return self.radial(_norm(x))
        return self.torus_eval(x, L)

    def torus_eval(self, x, L: float):
        return self.radial(_norm(torus_displacement(x, L)))

    # -- norms --------------------------------------------------------------
    def l1_norm(self) -> float:
        raise NotImplementedError

    def sup_norm(self) -> float:
        raise NotImplementedError

    @property
    def support_radius(self) -> float:
        """Radius beyond which the kernel vanishes (inf for infinite range)."""
        raise NotImplementedError

    @property
    def length_scale(self) -> float:
        """Characteristic range used to size search boxes and cut-offs."""
        return self.support_radius

    @property
    def is_zero(self) -> bool:
        return self.sup_norm() == 0.0

    def check_torus(self, L: float) -> dict:
        """Validate the kernel on a torus of edge ``L``; return wrapping metadata."""
        if self.support_radius >= L / 2 and not self.is_zero:
            raise KernelError(
                f"{type(self).__name__} support radius {self.support_radius} >= L/2 = {L / 2}: "
                "compact kernels must fit inside half the torus edge"
            )
        return {"wrapping": "minimum-image"}


@dataclass(frozen=True)
class TopHat(Kernel):
    """c on the open ball |x| < radius, 0 outside."""

    c: float = 1.0
    radius: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.c < 0 or self.radius < 0:
            raise KernelError("top-hat amplitude and radius must be nonnegative")

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < self.radius, float(self.c), 0.0)

    def l1_norm(self) -> float:
        return self.c * unit_ball_volume(self.d) * self.radius**self.d

    def sup_norm(self) -> float:
        return float(self.c) if self.radius > 0 else 0.0

    @property
    def support_radius(self) -> float:
        return float(self.radius)


@dataclass(frozen=True)
class Gaussian(Kernel):
    """c (2 pi sigma^2)^(-d/2) exp(-|x|^2 / 2 sigma^2); integrates to c."""

    c: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.c < 0 or self.sigma <= 0:
            raise KernelError("Gaussian needs c >= 0 and sigma > 0")

    @property
    def peak(self) -> float:
        return self.c * (2 * math.pi * self.sigma**2) ** (-self.d / 2)

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        return self.peak * np.exp(-0.5 * (r / self.sigma) ** 2)

    def torus_eval(self, x, L: float):
        base = torus_displacement(x, L)
        total = np.zeros(base.shape[:-1])
        for shift in np.ndindex(*(len(GAUSSIAN_IMAGES),) * self.d):
            offset = L * np.array([GAUSSIAN_IMAGES[s] for s in shift], dtype=float)
            total = total + self.radial(_norm(base + offset))
        return total

    def l1_norm(self) -> float:
        return float(self.c)

    def sup_norm(self) -> float:
        return self.peak

    @property
    def support_radius(self) -> float:
        return math.inf

    @property
    def length_scale(self) -> float:
        return 3.0 * self.sigma

    def check_torus(self, L: float) -> dict:
        return {
            "wrapping": f"{len(GAUSSIAN_IMAGES)} images per axis",
            "truncation_error_bound": math.exp(-0.5 * (L / (2 * self.sigma)) ** 2),
        }


@dataclass(frozen=True)
class TabulatedRadial(Kernel):
    """Piecewise-linear radial profile, zero beyond the last radius."""

    radii: tuple = field(default=(0.0, 1.0))
    values: tuple = field(default=(1.0, 0.0))

    def __post_init__(self):
        super().__post_init__()
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 2:
            raise KernelError("table needs matching 1-d radii/values with at least 2 entries")
        if r[0] < 0 or np.any(np.diff(r) <= 0):
            raise KernelError("table radii must be nonnegative and strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise KernelError("table values must be finite and nonnegative")
        object.__setattr__(self, "radii", tuple(float(a) for a in r))
        object.__setattr__(self, "values", tuple(float(a) for a in v))

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        out = np.interp(r, self.radii, self.values)
        return np.where(r > self.radii[-1], 0.0, out)

    def _fine_grid(self, refine: int = TABLE_REFINE):
        r = np.asarray(self.radii)
        # include the origin so the inner disc is integrated as well
        knots = np.concatenate([[0.0], r]) if r[0] > 0 else r
        fine = np.concatenate(
            [np.linspace(a, b, refine, endpoint=False) for a, b in zip(knots[:-1], knots[1:])]
            + [knots[-1:]]
        )
        return fine, self.radial(fine) * sphere_surface(self.d) * fine ** (self.d - 1)

    def l1_norm(self) -> float:
        """Exact integral of the interpolant: Gauss-Legendre on each segment.

        The integrand v(r) r^(d-1) is a polynomial of degree d per segment,
        so d // 2 + 1 nodes integrate it without error.
        """
        r = np.asarray(self.radii)
        knots = np.concatenate([[0.0], r]) if r[0] > 0 else r
        nodes, weights = np.polynomial.legendre.leggauss(self.d // 2 + 1)
        lo, hi = knots[:-1, None], knots[1:, None]
        x = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        vals = np.interp(x, self.radii, self.values) * x ** (self.d - 1)
        total = np.sum(0.5 * (hi - lo) * vals * weights)
        return float(sphere_surface(self.d) * total)

    def sup_norm(self) -> float:
        return float(max(self.values))

    @property
    def support_radius(self) -> float:
        return self.radii[-1]


def zero_kernel(d: int) -> TopHat:
    """The identically-zero kernel (contact model / pure-death settings)."""
    return TopHat(d=d, c=0.0, radius=0.0)


@dataclass(frozen=True)
class KernelPair:
    """Competition kernel a_minus, dispersal kernel a_plus and mortality m."""

    a_minus: Kernel
    a_plus: Kernel
    m: float = 0.0
    allow_pure_death: bool = False

    def __post_init__(self):
        if self.a_minus.d != self.a_plus.d:
            raise KernelError("competition and dispersal kernels must share dimension d")
        if self.m < 0:
            raise KernelError("mortality m must be nonnegative")

    @property
    def d(self) -> int:
        return self.a_minus.d

    @property
    def mass_plus(self) -> float:
        return self.a_plus.l1_norm()

    @property
    def mass_minus(self) -> float:
        return self.a_minus.l1_norm()


# -- energy functionals ------------------------------------------------------

def _as_points(eta, d: int) -> np.ndarray:
    pts = np.asarray(eta, dtype=float)
    if pts.size == 0:
        return np.zeros((0, d))
    return pts.reshape(-1, d)


def interaction_energy(x, eta, k: Kernel, L: float | None = None) -> float:
    """E(x, eta) = sum over y in eta of a(x - y).  The caller removes x from eta."""
    pts = _as_points(eta, k.d)
    if len(pts) == 0:
        return 0.0
    x = np.asarray(x, dtype=float).reshape(k.d)
    return float(np.sum(k(x - pts, L)))


def total_energy(eta, k: Kernel, L: float | None = None) -> float:
    """Sum over ordered pairs x != y in eta of a(x - y)."""
    pts = _as_points(eta, k.d)
    n = len(pts)
    if n < 2:
        return 0.0
    disp = pts[:, None, :] - pts[None, :, :]
    vals = k(disp, L)
    np.fill_diagonal(vals, 0.0)
    return float(vals.sum())


def death_energy(eta, m: float, a_minus: Kernel, b: float = 0.0, L: float | None = None) -> float:
    """(m + b)|eta| + E^-(eta); ``b = 0`` gives the total death rate E(eta)."""
    pts = _as_points(eta, a_minus.d)
    return (m + b) * len(pts) + total_energy(pts, a_minus, L)


def phi_theta(x, pair: KernelPair, theta: float, L: float | None = None):
    """a^-(x) - theta a^+(x); may be negative."""
    return pair.a_minus(x, L) - theta * pair.a_plus(x, L)
