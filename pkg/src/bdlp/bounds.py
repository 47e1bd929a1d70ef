"""Closed-form constants of the Banach-scale analysis and envelope checks.

Everything here is arithmetic on kernel masses, sup norms and the stability
pair (b, theta).  :func:`check_envelope` compares simulated or integrated
trajectories with the growth, extinction and pure-death envelopes and records
the outcome in a :class:`BoundLedger`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .kernels import KernelPair

__all__ = [
    "ScalePair",
    "BoundsError",
    "beta",
    "time_horizon",
    "q_norm_bound",
    "a_norm_bounds",
    "power_exp_bound_holds",
    "convergence_terms",
    "Theorem2Constants",
    "theorem2_constants",
    "alpha_horizon",
    "Envelope",
    "growth_envelope",
    "extinction_envelope",
    "pure_death_envelope",
    "Observed",
    "LedgerRecord",
    "BoundLedger",
    "check_envelope",
]

VARIANTS = ("B_full", "B_pos")


class BoundsError(ValueError):
    pass


@dataclass(frozen=True)
class ScalePair:
    alpha1: float
    alpha2: float
    variant: str = "B_full"

    def __post_init__(self):
        if not self.alpha2 > self.alpha1:
            raise BoundsError("scale indices need alpha2 > alpha1")
        if self.variant not in VARIANTS:
            raise BoundsError(f"variant must be one of {VARIANTS}")

    @property
    def gap(self) -> float:
        return self.alpha2 - self.alpha1

    def check_semigroup_range(self, theta: float) -> None:
        if self.alpha1 <= -math.log(theta):
            raise BoundsError(f"alpha1 = {self.alpha1} must exceed -log(theta) = {-math.log(theta)}")


def beta(alpha2: float, pair: KernelPair, b: float, variant: str = "B_full") -> float:
    """<a+> + b + <a-> e^alpha2 for the full operator, <a+> + b for its positive part."""
    if variant == "B_full":
        return pair.mass_plus + b + pair.mass_minus * math.exp(alpha2)
    if variant == "B_pos":
        return pair.mass_plus + b
    raise BoundsError(f"variant must be one of {VARIANTS}")


def time_horizon(scale: ScalePair, pair: KernelPair, b: float) -> float:
    """(alpha2 - alpha1) / beta; infinite when beta vanishes."""
    bt = beta(scale.alpha2, pair, b, scale.variant)
    return math.inf if bt == 0 else scale.gap / bt


def q_norm_bound(t: float, scale: ScalePair, pair: KernelPair, b: float) -> float:
    """T / (T - t) for 0 <= t < T."""
    T = time_horizon(scale, pair, b)
    if t < 0:
        raise BoundsError("t must be nonnegative")
    if math.isinf(T):
        return 1.0
    if t >= T:
        raise BoundsError(f"t = {t} reaches the existence horizon T = {T}; the bound diverges")
    return T / (T - t)


def a_norm_bounds(scale: ScalePair, pair: KernelPair, m: float | None = None):
    """Operator-norm bounds for A1, A2 and B between K_alpha1 and K_alpha2."""
    m = pair.m if m is None else m
    gap = scale.gap
    e = math.e
    a1 = m / (e * gap) + 4 * pair.a_minus.sup_norm() / (e**2 * gap**2)
    a2 = math.exp(-scale.alpha1) * 4 * pair.a_plus.sup_norm() / (e**2 * gap**2)
    bb = (pair.mass_plus + pair.mass_minus * math.exp(scale.alpha1)) / (e * gap)
    return a1, a2, bb


def power_exp_bound_holds(n_max: int = 1000, powers=(1, 2), sigmas=None) -> bool:
    """Check n^p exp(-sigma n) <= (p / (e sigma))^p on an exhaustive grid."""
    sigmas = np.round(np.arange(1, 21) * 0.1, 10) if sigmas is None else np.asarray(sigmas)
    n = np.arange(1, n_max + 1, dtype=float)
    for p in powers:
        for s in sigmas:
            lhs = p * np.log(n) - s * n
            rhs = p * math.log(p / (math.e * s))
            if np.any(lhs > rhs + 1e-12):
                return False
    return True


def convergence_terms(n_max: int, T: float, T_delta: float):
    """Terms (1/n!) (n/e)^n (T/T_delta)^n for n = 1..n_max and their partial sums."""
    if not 0 <= T < T_delta:
        raise BoundsError("need 0 <= T < T_delta")
    n = np.arange(1, n_max + 1, dtype=float)
    if T == 0:
        terms = np.zeros(n_max)
    else:
        lg = np.array([math.lgamma(k + 1) for k in n])
        terms = np.exp(n * (np.log(n) - 1 + math.log(T / T_delta)) - lg)
    return terms, np.cumsum(terms)


@dataclass(frozen=True)
class Theorem2Constants:
    case: str  # "growth" or "extinction"
    C: float
    delta: float | None = None
    epsilon: float | None = None
    theta_eps: float | None = None


def theorem2_constants(pair: KernelPair, certificate, k0_sup_root: float, delta_or_epsilon: float) -> Theorem2Constants:
    """Constants of the growth (m <= <a+>) or extinction (m > <a+>) envelope.

    ``certificate`` needs ``theta`` and ``b`` attributes.  In the growth case
    the argument is delta; in the extinction case it is epsilon.
    """
    theta, b = float(certificate.theta), float(certificate.b)
    m, ap = pair.m, pair.mass_plus
    if ap <= 0:
        raise BoundsError("<a+> = 0 is the pure-death case; use pure_death_envelope")
    inv_theta = 0.0 if math.isinf(theta) else 1.0 / theta
    if m <= ap:
        delta = float(delta_or_epsilon)
        if b == 0:
            if delta > m:
                raise BoundsError(f"delta = {delta} must satisfy delta <= m = {m}")
            C = max(k0_sup_root, inv_theta)
        else:
            if delta >= m:
                raise BoundsError(f"delta = {delta} must satisfy delta < m = {m} when b > 0")
            # 1/C <= theta is needed to rescale (b, theta) down to (m - delta)
            C = max(k0_sup_root, inv_theta, b * inv_theta / (m - delta))
        return Theorem2Constants("growth", C, delta=delta)
    eps = float(delta_or_epsilon)
    if not 0 < eps < m - ap:
        raise BoundsError(f"epsilon = {eps} must lie in the open interval (0, {m - ap})")
    theta_eps = theta * (1 - (eps + 2 * ap) / (2 * m))
    C = max(k0_sup_root, 1.0 / theta_eps)
    if b > 0:
        # only binds when b > m
        C = max(C, b * inv_theta / (m - ap - eps / 2))
    return Theorem2Constants("extinction", C, epsilon=eps, theta_eps=theta_eps)


def alpha_horizon(C_delta: float, delta: float, pair: KernelPair, T: float) -> float:
    """log C_delta + (<a+> - delta) T."""
    return math.log(C_delta) + (pair.mass_plus - delta) * T


# -- envelopes and checks ---------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    """Upper bound on k^(n)(t) of the form prefactor_n * exp(exponent_n * t)."""

    name: str
    formula: str
    prefactors: tuple  # for n = 1, 2
    exponents: tuple

    def bound(self, n: int, t):
        return self.prefactors[n - 1] * np.exp(self.exponents[n - 1] * np.asarray(t, dtype=float))


def growth_envelope(C: float, mass_plus: float, delta: float) -> Envelope:
    rate = mass_plus - delta
    return Envelope("growth", "bed", (C, C**2), (rate, 2 * rate))


def extinction_envelope(C: float, epsilon: float) -> Envelope:
    return Envelope("extinction", "Bedd", (C, C**2), (-epsilon, -epsilon))


def pure_death_envelope(rho0: float, k2_sup0: float, m: float) -> Envelope:
    """k_t <= k_0 exp(-E t) with E >= m|eta|; the pair bound uses E(pair) >= 2m."""
    return Envelope("pure_death", "Est", (rho0, k2_sup0), (-m, -2 * m))


@dataclass
class Observed:
    """Density and pair-function observations; stderr is None for deterministic data."""

    times: np.ndarray
    rho: np.ndarray
    k2: list | None = None
    rho_stderr: np.ndarray | None = None
    k2_stderr: list | None = None
    source: str = "simulation"

    @classmethod
    def from_hierarchy(cls, traj) -> "Observed":
        return cls(traj.times, traj.rho, list(traj.k2), source="hierarchy")

    @classmethod
    def from_simulation(cls, density, hist=None) -> "Observed":
        k2 = se = None
        if hist is not None:
            k2, se = list(hist.k2), list(hist.stderr)
        return cls(density.times, density.rho, k2, density.stderr, se, "simulation")


@dataclass
class LedgerRecord:
    check: str
    time: float
    bound_value: float
    observed: float
    margin: float
    status: str  # pass, fail, inconclusive, expected-fail
    formula: str = ""


@dataclass
class BoundLedger:
    records: list = field(default_factory=list)
    values: dict = field(default_factory=dict)

    def add(self, rec: LedgerRecord) -> None:
        self.records.append(rec)

    def extend(self, recs: Iterable[LedgerRecord]) -> None:
        self.records.extend(recs)

    def statuses(self, check: str | None = None) -> list:
        return [r.status for r in self.records if check is None or r.check == check]

    @property
    def failures(self) -> list:
        return [r for r in self.records if r.status == "fail"]

    @property
    def ok(self) -> bool:
        return not self.failures

    def write_csv(self, path, header_lines: Iterable[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["check", "time", "bound_value", "observed", "margin", "status"])
            for r in self.records:
                w.writerow([r.check, f"{r.time:.10g}", f"{r.bound_value:.10g}", f"{r.observed:.10g}", f"{r.margin:.10g}", r.status])


def _status(observed: float, stderr: float, bound: float, cushion: float) -> str:
    if observed <= bound:
        return "pass"
    if observed - cushion * stderr <= bound:
        return "inconclusive"
    return "fail"


def check_envelope(
    observed: Observed,
    envelope: Envelope,
    label: str = "",
    cushion: float = 3.0,
    negative_control: bool = False,
) -> list:
    """Compare rho(t) and sup k2(t) with the envelope at each observation time.

    Simulation data carry standard errors; an excess within ``cushion``
    standard errors is recorded ``inconclusive``.  For pair functions the
    comparison is bin by bin and the worst bin is reported.  Negative
    controls turn ``fail`` into ``expected-fail``.
    """
    tag = label or envelope.name
    out = []
    for i, t in enumerate(observed.times):
        bound1 = float(envelope.bound(1, t))
        rho = float(observed.rho[i])
        se = 0.0 if observed.rho_stderr is None else float(observed.rho_stderr[i])
        out.append(LedgerRecord(f"{tag}:rho", float(t), bound1, rho, bound1 - rho, _status(rho, se, bound1, cushion), envelope.formula))
        if observed.k2 is None:
            continue
        bound2 = float(envelope.bound(2, t))
        k2 = np.asarray(observed.k2[i], dtype=float).ravel()
        k2_se = np.zeros_like(k2) if observed.k2_stderr is None else np.asarray(observed.k2_stderr[i]).ravel()
        statuses = [_status(v, s, bound2, cushion) for v, s in zip(k2, k2_se)]
        worst = "fail" if "fail" in statuses else "inconclusive" if "inconclusive" in statuses else "pass"
        top = float(np.max(k2)) if k2.size else 0.0
        out.append(LedgerRecord(f"{tag}:k2", float(t), bound2, top, bound2 - top, worst, envelope.formula))
    if negative_control:
        for r in out:
            if r.status == "fail":
                r.status = "expected-fail"
    return out
