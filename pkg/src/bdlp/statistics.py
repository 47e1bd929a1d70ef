"""Ensemble estimators of the first two correlation functions.

An ensemble is a list of :class:`~bdlp.simulator.Trajectory` objects whose
snapshots share observation times.  Pair counts use ordered pairs, so a
Poisson field of intensity kappa gives k2 = kappa^2 in every bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .kernels import unit_ball_volume

__all__ = [
    "DensityEstimate",
    "PairHistogram",
    "default_bins",
    "shell_volumes",
    "pair_counts",
    "density_estimate",
    "pair_correlation",
    "cluster_index",
]


@dataclass
class DensityEstimate:
    times: np.ndarray
    rho: np.ndarray
    stderr: np.ndarray
    replicas: int


@dataclass
class PairHistogram:
    """k2 estimates per observation time and distance bin."""

    times: np.ndarray
    edges: np.ndarray
    k2: np.ndarray  # (n_times, n_bins)
    stderr: np.ndarray
    replicas: int
    volume: float
    ordered_pairs: bool = True

    @property
    def centres(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def default_bins(L: float, n_bins: int = 64) -> np.ndarray:
    """64 logarithmic bins on (0.01 L/2, L/2]."""
    return np.geomspace(0.01 * L / 2, L / 2, n_bins + 1)


def shell_volumes(edges, d: int) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    return unit_ball_volume(d) * (edges[1:] ** d - edges[:-1] ** d)


def _validate_edges(edges, L: float) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
        raise ValueError("bin edges must be a nonnegative increasing sequence")
    if edges[-1] > L / 2 * (1 + 1e-12):
        raise ValueError(f"bin edge {edges[-1]} beyond L/2 = {L / 2}: torus distances are ambiguous there")
    return edges


def pair_counts(points, L: float, edges) -> np.ndarray:
    """Ordered-pair counts of torus distances falling in each bin."""
    pts = np.asarray(points, dtype=float)
    edges = np.asarray(edges, dtype=float)
    if len(pts) < 2:
        return np.zeros(len(edges) - 1)
    # cKDTree requires coordinates in [0, L)
    tree = cKDTree(np.mod(pts, L) % L, boxsize=L)
    pairs = tree.query_pairs(edges[-1], output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(len(edges) - 1)
    disp = pts[pairs[:, 0]] - pts[pairs[:, 1]]
    disp -= L * np.round(disp / L)
    r = np.sqrt(np.sum(disp * disp, axis=1))
    counts, _ = np.histogram(r, bins=edges)
    return 2.0 * counts


def _aligned(ensemble):
    if not ensemble:
        return np.zeros(0), 0
    n_times = min(len(tr.snapshots) for tr in ensemble)
    times = np.array([s.time for s in ensemble[0].snapshots[:n_times]])
    return times, n_times


def _mean_and_stderr(samples: np.ndarray):
    """Mean over axis 0 and its standard error (zero for fewer than 2 samples)."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / np.sqrt(n)


def density_estimate(ensemble, volume: float) -> DensityEstimate:
    """Mean of N/V over replicas at each observation time, with its standard error.

    Truncated replicas contribute only up to their last snapshot, so times are
    limited to those every replica reached.
    """
    times, n_times = _aligned(ensemble)
    if not ensemble:
        return DensityEstimate(times, np.zeros(0), np.zeros(0), 0)
    dens = np.array([[s.n / volume for s in tr.snapshots[:n_times]] for tr in ensemble])
    rho, se = _mean_and_stderr(dens)
    return DensityEstimate(times, rho, se, len(ensemble))


def pair_correlation(ensemble, L: float, d: int, edges=None) -> PairHistogram:
    """Bin-averaged k2(r) = E[ordered pairs with distance in bin] / (V vol(bin)).

    Snapshots must carry point positions (``RunConfig(keep_points=True)``).
    """
    edges = _validate_edges(default_bins(L) if edges is None else edges, L)
    volume = L**d
    shells = shell_volumes(edges, d)
    times, n_times = _aligned(ensemble)
    per_replica = np.zeros((len(ensemble), n_times, len(edges) - 1))
    for i, tr in enumerate(ensemble):
        for j, snap in enumerate(tr.snapshots[:n_times]):
            if snap.points is None:
                raise ValueError("snapshot has no stored points; run with keep_points=True")
            per_replica[i, j] = pair_counts(snap.points, L, edges) / (volume * shells)
    if len(ensemble) == 0:
        k2 = se = np.zeros((0, len(edges) - 1))
    else:
        k2, se = _mean_and_stderr(per_replica)
    return PairHistogram(times, edges, k2, se, len(ensemble), volume)


def cluster_index(hist: PairHistogram, rho, r0: float) -> np.ndarray:
    """max over bins with upper edge <= r0 of k2 / rho^2, per observation time.

    Values are NaN where rho is zero.
    """
    rho = np.asarray(rho, dtype=float)
    mask = hist.edges[1:] <= r0 * (1 + 1e-12)
    if not np.any(mask):
        raise ValueError(f"no bin lies entirely below r0 = {r0}")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = hist.k2[:, mask] / (rho[:, None] ** 2)
    out = ratio.max(axis=1)
    return np.where(rho > 0, out, np.nan)
