"""Certificates for the (b, theta) stability condition

    b |eta| + E^-(eta) >= theta E^+(eta)   for every finite eta,

and a randomised falsifier that searches for configurations violating it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import Gaussian, Kernel, KernelPair, TabulatedRadial, TopHat

__all__ = [
    "StabilityCertificate",
    "StabilityError",
    "UnsupportedShape",
    "PACKING_DENSITY",
    "packing_bound",
    "pointwise_theta",
    "rescale",
    "finite_range_theta",
    "gaussian_theta",
    "stability_functional",
    "verify_bruteforce",
    "BruteForceResult",
    "certify",
]

# densest packing of equal spheres; 1 is the trivial bound used for d >= 4
PACKING_DENSITY = {1: 1.0, 2: math.pi / math.sqrt(12), 3: math.pi / math.sqrt(18)}
SCAN_POINTS = 4097

SOURCES = ("PointwiseDomination", "FiniteRangePacking", "GaussianFourier", "Rescaled", "EmpiricalOnly")


class StabilityError(ValueError):
    pass


class UnsupportedShape(StabilityError):
    pass


@dataclass(frozen=True)
class StabilityCertificate:
    theta: float
    b: float
    source: str
    xi: int | None = None
    worst_empirical_U: float | None = None
    violating_config: list | None = None
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.theta > 0:
            raise StabilityError(f"theta must be positive, got {self.theta}")
        if self.b < 0:
            raise StabilityError(f"b must be nonnegative, got {self.b}")
        if self.source not in SOURCES:
            raise StabilityError(f"unknown source {self.source!r}")

    def to_record(self) -> dict:
        rec = {
            "theta": self.theta,
            "b": self.b,
            "source": self.source,
            "xi": self.xi,
            "worst_U": self.worst_empirical_U,
        }
        if self.violating_config is not None:
            rec["violating_config"] = self.violating_config
        return rec


def packing_bound(d: int, r: float, R: float) -> int:
    """Upper bound on the number of r/2-balls packed in a ball of radius R + r/2."""
    x = PACKING_DENSITY.get(d, 1.0) * (1 + 2 * R / r) ** d
    nearest = round(x)
    # snap values that are integers up to rounding noise, otherwise round up
    return int(nearest) if abs(x - nearest) < 1e-9 * max(1.0, x) else int(math.ceil(x))


def rescale(theta0: float, b0: float, theta: float) -> float:
    """b valid at a smaller theta: b0 theta / theta0."""
    if not 0 < theta <= theta0:
        raise StabilityError(f"rescaling needs 0 < theta <= theta0, got theta={theta}, theta0={theta0}")
    if b0 < 0:
        raise StabilityError("b0 must be nonnegative")
    return b0 * theta / theta0


def _scan_radius(pair: KernelPair) -> float:
    finite = [k.support_radius for k in (pair.a_minus, pair.a_plus) if math.isfinite(k.support_radius)]
    scales = finite + [k.length_scale for k in (pair.a_minus, pair.a_plus)]
    return max(scales) * 1.01


def pointwise_theta(pair: KernelPair) -> StabilityCertificate | None:
    """Largest theta with a^-(x) >= theta a^+(x) everywhere, or None.

    Top-hat and Gaussian combinations are handled in closed form; anything
    involving a table is scanned on ``SCAN_POINTS`` radii covering the
    larger support.
    """
    am, ap = pair.a_minus, pair.a_plus
    if ap.is_zero:
        return StabilityCertificate(math.inf, 0.0, "PointwiseDomination", notes={"reason": "a+ vanishes"})
    if am.is_zero:
        return None
    theta = None
    if isinstance(am, TopHat) and isinstance(ap, TopHat):
        theta = am.c / ap.c if am.radius >= ap.radius else None
    elif isinstance(am, Gaussian) and isinstance(ap, Gaussian):
        if am.sigma >= ap.sigma:
            theta = (am.c / ap.c) * (ap.sigma / am.sigma) ** am.d
    elif isinstance(am, Gaussian) and isinstance(ap, TopHat):
        # inf of a- over the open ball |x| < R is its value at R
        theta = float(am.radial(ap.radius)) / ap.c
    elif isinstance(am, TopHat) and isinstance(ap, Gaussian):
        theta = None
    else:
        if not math.isfinite(ap.support_radius):
            if math.isfinite(am.support_radius):
                return None
        r = np.linspace(0.0, _scan_radius(pair), SCAN_POINTS)
        vm, vp = am.radial(r), ap.radial(r)
        pos = vp > 0
        theta = float(np.min(vm[pos] / vp[pos])) if np.any(pos) else math.inf
        if theta > 0:
            return StabilityCertificate(
                theta, 0.0, "PointwiseDomination",
                notes={"scan": f"{SCAN_POINTS} radii on [0, {r[-1]:.6g}]"},
            )
        return None
    if theta is None or not theta > 0:
        return None
    return StabilityCertificate(theta, 0.0, "PointwiseDomination")


def _plateau(k: Kernel, c_minus, r):
    if c_minus is not None and r is not None:
        return float(c_minus), float(r)
    if isinstance(k, TopHat):
        return float(k.c), float(k.radius)
    raise StabilityError("pass c_minus and r explicitly for a non-top-hat competition kernel")


def finite_range_theta(pair: KernelPair, b: float, c_minus: float | None = None, r: float | None = None) -> StabilityCertificate:
    """Certificate for a finite-range dispersal kernel via a sphere-packing count.

    Requires a^- >= c_minus on |x| < r (read off a top-hat, otherwise
    asserted by the caller) and a top-hat a^+ of height c_plus and radius R.
    """
    ap = pair.a_plus
    if not isinstance(ap, TopHat):
        raise UnsupportedShape(f"finite-range certificate needs a top-hat dispersal kernel, got {type(ap).__name__}")
    c_minus, r = _plateau(pair.a_minus, c_minus, r)
    c_plus, R = float(ap.c), float(ap.radius)
    if c_minus <= 0 or r <= 0:
        raise StabilityError("competition plateau c_minus and radius r must be positive")
    if r >= R:
        return StabilityCertificate(c_minus / c_plus, 0.0, "FiniteRangePacking", xi=1)
    if not b > 0:
        raise StabilityError("b must be positive when the dispersal range exceeds the competition range")
    xi = packing_bound(pair.d, r, R)
    theta = min(c_minus / (c_plus * xi), b / (2 * c_plus * (xi - 1)))
    return StabilityCertificate(theta, float(b), "FiniteRangePacking", xi=xi)


def gaussian_theta(pair: KernelPair, b: float) -> StabilityCertificate:
    """Certificate for two Gaussian kernels.

    For sigma_- >= sigma_+ pointwise domination gives b = 0.  Otherwise
    phi = a^- - theta0 a^+ with theta0 = c_-/c_+ has a nonnegative Fourier
    transform, so it is stable with constant phi(0); the requested ``b`` is
    then reached by rescaling theta.
    """
    am, ap = pair.a_minus, pair.a_plus
    if not (isinstance(am, Gaussian) and isinstance(ap, Gaussian)):
        raise UnsupportedShape("gaussian_theta needs two Gaussian kernels")
    if am.sigma >= ap.sigma:
        return pointwise_theta(pair)
    if not b > 0:
        raise StabilityError("b must be positive when sigma_- < sigma_+")
    d = pair.d
    theta0 = am.c / ap.c
    b0 = am.c * ((2 * math.pi * am.sigma**2) ** (-d / 2) - (2 * math.pi * ap.sigma**2) ** (-d / 2))
    if b >= b0:
        return StabilityCertificate(theta0, float(b0), "GaussianFourier", notes={"b0": b0, "theta0": theta0})
    theta = theta0 * b / b0
    return StabilityCertificate(theta, rescale(theta0, b0, theta), "Rescaled", notes={"b0": b0, "theta0": theta0})


def certify(pair: KernelPair, b: float | None = None) -> StabilityCertificate | None:
    """Pick the strongest available certificate for ``pair``."""
    cert = pointwise_theta(pair)
    if cert is not None:
        return cert
    am, ap = pair.a_minus, pair.a_plus
    if isinstance(am, Gaussian) and isinstance(ap, Gaussian):
        return gaussian_theta(pair, b if b is not None else 1.0)
    if isinstance(ap, TopHat) and isinstance(am, TopHat):
        return finite_range_theta(pair, b if b is not None else 1.0)
    return None


# -- brute-force falsifier --------------------------------------------------

def stability_functional(points, pair: KernelPair, theta: float, b: float) -> float:
    """U(eta) = b|eta| + E^-(eta) - theta E^+(eta) in free space."""
    pts = np.asarray(points, dtype=float).reshape(-1, pair.d)
    n = len(pts)
    if n < 2:
        return b * n
    disp = pts[:, None, :] - pts[None, :, :]
    r = np.sqrt(np.sum(disp**2, axis=-1))
    phi = pair.a_minus.radial(r) - theta * pair.a_plus.radial(r)
    np.fill_diagonal(phi, 0.0)
    return float(b * n + phi.sum())


@dataclass
class BruteForceResult:
    min_U: float
    violating_config: np.ndarray | None
    configurations: int

    @property
    def violated(self) -> bool:
        return self.violating_config is not None


def _phi(pair: KernelPair, theta: float, r):
    return pair.a_minus.radial(r) - theta * pair.a_plus.radial(r)


def _batch_U(pts, pair, theta, b):
    disp = pts[:, :, None, :] - pts[:, None, :, :]
    r = np.sqrt(np.sum(disp**2, axis=-1))
    phi = _phi(pair, theta, r)
    n = pts.shape[1]
    phi[:, np.arange(n), np.arange(n)] = 0.0
    return b * n + phi.sum(axis=(1, 2))


def _templates(n: int, d: int, r_short: float, r_long: float, rng, count: int) -> np.ndarray:
    """Adversarial starting configurations at kernel-range scales."""
    out = []
    per = max(1, count // 4)
    for _ in range(per):
        # tight cluster
        out.append(rng.normal(0.0, 0.01 * r_short, size=(n, d)))
        # centre plus shell just inside the dispersal range
        dirs = rng.standard_normal((n - 1, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        out.append(np.vstack([np.zeros((1, d)), 0.99 * r_long * dirs]))
        # two clusters one dispersal range apart
        half = n // 2
        a = rng.normal(0.0, 0.01 * r_short, size=(half, d))
        bpts = rng.normal(0.0, 0.01 * r_short, size=(n - half, d))
        bpts[:, 0] += 0.99 * r_long
        out.append(np.vstack([a, bpts]))
        # chain with spacing just beyond the competition range
        chain = np.zeros((n, d))
        chain[:, 0] = 1.01 * r_short * np.arange(n)
        out.append(chain + rng.normal(0.0, 1e-3 * r_short, size=(n, d)))
    return np.array(out)


def verify_bruteforce(
    pair: KernelPair,
    theta: float,
    b: float,
    n_max: int = 6,
    trials: int = 10_000,
    rng_seed: int = 0,
    sweeps: int = 200,
) -> BruteForceResult:
    """Search for eta with U(eta) < 0 by random starts and coordinate descent.

    Random configurations of 2..n_max points are drawn in a box of edge four
    kernel ranges and, together with cluster/shell/chain templates, refined
    by greedy coordinate descent whose step shrinks geometrically from
    0.5 to 1e-3 kernel ranges.  A negative minimum comes with the
    configuration that attains it.
    """
    if n_max < 2 or trials < 1:
        raise StabilityError("need n_max >= 2 and trials >= 1")
    d = pair.d
    ranges = [k.length_scale for k in (pair.a_minus, pair.a_plus) if k.length_scale > 0]
    scale = max(ranges) if ranges else 1.0
    r_short = min(ranges) if ranges else 1.0
    r_long = pair.a_plus.length_scale if pair.a_plus.length_scale > 0 else scale
    sizes = list(range(2, n_max + 1))
    base, extra = divmod(trials, len(sizes))
    steps = 0.5 * scale * (1e-3 / 0.5) ** (np.arange(sweeps) / max(1, sweeps - 1))

    best_U = math.inf
    best_cfg = None
    total = 0
    for j, n in enumerate(sizes):
        seq = np.random.SeedSequence(rng_seed, spawn_key=(n,))
        rng = np.random.default_rng(seq)
        count = base + (1 if j < extra else 0)
        starts = [rng.random((count, n, d)) * 4 * scale] if count else []
        starts.append(_templates(n, d, r_short, r_long, rng, 8))
        pts = np.concatenate(starts)
        U = _batch_U(pts, pair, theta, b)
        for step in steps:
            for i in range(n):
                others = np.delete(pts, i, axis=1)
                xi = pts[:, i, :]
                r_old = np.linalg.norm(others - xi[:, None, :], axis=-1)
                contrib_old = 2.0 * _phi(pair, theta, r_old).sum(axis=1)
                for axis in range(d):
                    for sign in (1.0, -1.0):
                        cand = xi.copy()
                        cand[:, axis] += sign * step
                        r_new = np.linalg.norm(others - cand[:, None, :], axis=-1)
                        contrib_new = 2.0 * _phi(pair, theta, r_new).sum(axis=1)
                        gain = contrib_new - contrib_old
                        accept = gain < 0
                        if np.any(accept):
                            xi = np.where(accept[:, None], cand, xi)
                            U = U + np.where(accept, gain, 0.0)
                            contrib_old = np.where(accept, contrib_new, contrib_old)
                pts[:, i, :] = xi
        # recompute exactly to avoid accumulated bookkeeping error
        U = _batch_U(pts, pair, theta, b)
        k = int(np.argmin(U))
        total += len(pts)
        if U[k] < best_U:
            best_U = float(U[k])
            best_cfg = pts[k].copy()
    violating = best_cfg if best_U < 0 else None
    return BruteForceResult(best_U, violating, total)


def with_empirical(cert: StabilityCertificate, result: BruteForceResult) -> StabilityCertificate:
    cfg = None if result.violating_config is None else result.violating_config.tolist()
    return replace(cert, worst_empirical_U=result.min_U, violating_config=cfg)
