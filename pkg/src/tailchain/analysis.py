"""Trace post-processing: KDE, basin occupancy, PCA, step-norm views."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .chain import ChainTrace
from .problems import ScalarObjective

__all__ = [
    "DensityEstimate",
    "BasinReport",
    "PcaProjection",
    "kde_1d",
    "silverman_bandwidth",
    "basin_stats",
    "pca_project",
    "extract_step_norms",
]


@dataclass
class DensityEstimate:
    """Gaussian-kernel density on a uniform grid, unit trapezoid mass."""

    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    log_scale: bool = False

    def mass(self) -> float:
        return float(np.trapz(self.density, self.grid))


def silverman_bandwidth(samples: np.ndarray, factor: float = 0.25) -> float:
    """Silverman's rule scaled by `factor` (default 0.25: a low-bandwidth
    estimate that keeps tail structure visible)."""
    s = np.asarray(samples, dtype=np.float64)
    sd = float(np.std(s))
    q75, q25 = np.percentile(s, [75, 25])
    iqr = (q75 - q25) / 1.34
    scale = min(sd, iqr) if iqr > 0 else sd
    if scale == 0:
        scale = max(abs(float(np.mean(s))), 1.0)
    return factor * 0.9 * scale * s.size ** (-0.2)


def kde_1d(samples, bandwidth: Optional[float] = None,
           grid_size: int = 1024, log_scale: bool = False) -> DensityEstimate:
    """Gaussian KDE on a uniform grid spanning [min - 3h, max + 3h].

    Computed by binning plus Gaussian filtering, so the cost is
    O(n + grid_size) and 1e7-sample traces are cheap.  The density is
    renormalised to unit trapezoid mass on the grid.  log_scale applies
    the KDE to log(samples) and reports the density of log(x).
    """
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("no samples")
    if log_scale:
        s = np.log(s[s > 0])
        if s.size == 0:
            raise ValueError("log_scale needs positive samples")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(s)
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    h = float(bandwidth)
    lo, hi = float(s.min()) - 3 * h, float(s.max()) + 3 * h
    grid = np.linspace(lo, hi, grid_size)
    dx = grid[1] - grid[0] if grid_size > 1 else 1.0
    edges = np.linspace(lo - dx / 2, hi + dx / 2, grid_size + 1)
    hist, _ = np.histogram(s, bins=edges)
    dens = ndimage.gaussian_filter1d(hist.astype(np.float64), sigma=h / dx,
                                     mode="constant", cval=0.0)
    dens = np.maximum(dens, 0.0)
    mass = np.trapz(dens, grid)
    if mass <= 0:
        raise ValueError("degenerate density")
    return DensityEstimate(grid, dens / mass, h, log_scale)


@dataclass
class BasinReport:
    """Occupancy of Voronoi cells around labelled critical points."""

    critical_points: np.ndarray
    critical_labels: tuple
    occupancy: np.ndarray          # fraction of samples per critical point
    hop_count: int
    near_critical_mass: float      # fraction within `radius` of any c.p.
    radius: float

    def occupied_basins(self, threshold: float = 0.05) -> int:
        return int(np.sum(self.occupancy > threshold))

    def to_dict(self):
        return {
            "critical_points": self.critical_points.tolist(),
            "critical_labels": list(self.critical_labels),
            "occupancy": self.occupancy.tolist(),
            "hop_count": self.hop_count,
            "near_critical_mass": self.near_critical_mass,
            "radius": self.radius,
        }


def basin_stats(trace: ChainTrace, objective: ScalarObjective,
                radius: float = 0.2) -> BasinReport:
    """Assign recorded 1-d iterates to nearest-critical-point cells.

    A hop is a cell change between consecutive recorded iterates;
    near-critical mass is the fraction of samples within `radius` of any
    critical point.
    """
    cps = np.asarray(objective.critical_points, dtype=np.float64)
    if cps.size == 0:
        raise ValueError("objective has no labelled critical points")
    order = np.argsort(cps)
    cps = cps[order]
    labels = tuple(objective.critical_labels[i] for i in order) \
        if objective.critical_labels else ("?",) * cps.size
    w = trace.weight_iterates()
    if w.shape[1] != 1:
        raise ValueError("basin_stats needs a 1-d weight trace")
    x = w[:, 0]
    if x.size == 0:
        raise ValueError("empty trace")
    # Voronoi on the line: index by midpoint bisection
    mids = 0.5 * (cps[1:] + cps[:-1])
    cell = np.searchsorted(mids, x)
    occ = np.bincount(cell, minlength=cps.size) / x.size
    hops = int(np.count_nonzero(np.diff(cell)))
    near = float(np.mean(np.abs(x - cps[cell]) <= radius))
    return BasinReport(cps, labels, occ, hops, near, radius)


@dataclass
class PcaProjection:
    """Principal-component scores of (pooled) iterate matrices."""

    component_indices: tuple       # 0-based indices of reported components
    scores: np.ndarray             # (n_iterates, len(component_indices))
    explained_variance_ratio: np.ndarray  # all ratios, non-increasing
    components: np.ndarray         # rows = requested components
    mean: np.ndarray
    flags: list = field(default_factory=list)


def pca_project(traces, components: Sequence[int] = (0, 1)) -> PcaProjection:
    """PCA of mean-centred weight iterates; scores for chosen components.

    `traces` is one ChainTrace or a sequence (pooled).  Component indices
    are 0-based.  Requests past the matrix rank are truncated and flagged.
    """
    if isinstance(traces, ChainTrace):
        traces = [traces]
    mats = [t.weight_iterates() for t in traces]
    X = np.vstack(mats)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 iterates")
    mean = X.mean(axis=0)
    Xc = X - mean
    # SVD of the centred matrix: singular vectors = covariance eigenvectors
    U, svals, Vt = np.linalg.svd(Xc, full_matrices=False)
    var = svals**2
    total = var.sum()
    ratios = var / total if total > 0 else np.zeros_like(var)
    rank = int(np.sum(svals > svals[0] * 1e-12)) if svals.size else 0
    flags = []
    comps = tuple(int(c) for c in components)
    if any(c >= rank for c in comps):
        flags.append("rank_truncated")
        comps = tuple(c for c in comps if c < rank)
    scores = Xc @ Vt[list(comps)].T if comps else np.empty((X.shape[0], 0))
    return PcaProjection(comps, scores, ratios, Vt[list(comps)], mean, flags)


def extract_step_norms(trace: ChainTrace, stride: int = 1) -> np.ndarray:
    """Recorded post-burn-in step norms, optionally strided.  Pure view:
    returns a fresh array, never mutates the trace."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return np.array(trace.step_norms[::stride])
