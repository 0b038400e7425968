"""Exposure statistics, influence distance, and the region of interest.

Percentiles use linear interpolation between order statistics (the
inclusive convention); skewness is the adjusted Fisher-Pearson sample
statistic with the n/((n-1)(n-2)) factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np


class AnalysisError(Exception):
    pass


@dataclass(frozen=True)
class StatSummary:
    median: float
    maximum: float
    p25: float
    p75: float
    p99: float
    skewness: float
    n: int

    def as_dict(self):
        return asdict(self)


def summarize(samples) -> StatSummary:
    """Distribution summary of exposure samples (NaN entries dropped)."""
    x = np.asarray(samples, dtype=float).ravel()
    x = x[~np.isnan(x)]
    if x.size < 3:
        raise AnalysisError(f"need at least 3 samples, got {x.size}")
    p25, med, p75, p99 = np.percentile(x, [25.0, 50.0, 75.0, 99.0],
                                       method="linear")
    n = x.size
    mean = float(x.mean())
    s = float(x.std(ddof=1))
    if s == 0.0:
        skew = 0.0
    else:
        skew = n / ((n - 1) * (n - 2)) * float(np.sum(((x - mean) / s) ** 3))
    return StatSummary(float(med), float(x.max()), float(p25), float(p75),
                       float(p99), skew, n)


def distance_profile(points, values, origin, bin_width: float = 3.0):
    """Samples grouped by horizontal distance from a reference transmitter.

    Returns a list of (bin_distance, distances, values) triples sorted by
    bin; every sample in a bin is preserved because the field at a given
    range is multi-valued.  NaN values (discarded receivers) are dropped.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float).ravel()
    origin = np.asarray(origin, dtype=float)
    d = np.hypot(points[:, 0] - origin[0], points[:, 1] - origin[1])
    keep = ~np.isnan(values)
    d = d[keep]
    values = values[keep]
    if bin_width <= 0:
        raise AnalysisError("bin width must be positive")
    bins = np.round(d / bin_width).astype(int)
    out = []
    for b in np.unique(bins):
        m = bins == b
        out.append((float(b * bin_width), d[m], values[m]))
    return out


def compute_dlim(distances, values, factor: float = 0.7) -> float:
    """Influence distance: farthest sample still at ``factor`` of the p99.

    The threshold is factor * p99 over all samples; the result is the
    maximum distance among samples meeting it.
    """
    d = np.asarray(distances, dtype=float).ravel()
    v = np.asarray(values, dtype=float).ravel()
    keep = ~np.isnan(v)
    d, v = d[keep], v[keep]
    if v.size == 0:
        raise AnalysisError("empty profile")
    threshold = factor * float(np.percentile(v, 99.0, method="linear"))
    meets = v >= threshold
    if not np.any(meets):
        raise AnalysisError("no sample meets the influence threshold")
    return float(d[meets].max())


@dataclass(frozen=True)
class Roi:
    """Axis-aligned bounding square of all transmitter influence disks."""
    center: tuple
    half_side: float
    tx_positions: tuple
    d_lim: float

    def contains(self, point) -> bool:
        x, y = float(point[0]), float(point[1])
        return (abs(x - self.center[0]) <= self.half_side + 1e-12
                and abs(y - self.center[1]) <= self.half_side + 1e-12)

    def in_influence(self, point) -> bool:
        """Within d_lim of at least one transmitter (disk membership)."""
        x, y = float(point[0]), float(point[1])
        return any(math.hypot(x - tx, y - ty) <= self.d_lim + 1e-12
                   for tx, ty in self.tx_positions)

    def as_dict(self):
        return {
            "center": list(self.center),
            "half_side": self.half_side,
            "side": 2.0 * self.half_side,
            "d_lim": self.d_lim,
            "tx_positions": [list(p) for p in self.tx_positions],
        }


def build_roi(tx_positions, d_lim: float) -> Roi:
    """Smallest axis-aligned square covering every radius-d_lim disk."""
    if not len(tx_positions):
        raise AnalysisError("ROI needs at least one transmitter position")
    if not d_lim > 0:
        raise AnalysisError("d_lim must be positive")
    xy = np.asarray([[p[0], p[1]] for p in tx_positions], dtype=float)
    lo = xy.min(axis=0) - d_lim
    hi = xy.max(axis=0) + d_lim
    size = hi - lo
    half = float(max(size) / 2.0)
    center = (lo + hi) / 2.0
    return Roi((float(center[0]), float(center[1])), half,
               tuple((float(x), float(y)) for x, y in xy), float(d_lim))
