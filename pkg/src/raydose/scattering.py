"""Diffuse scattering (directive lobe model) and foliage attenuation.

Building walls scatter a fraction S of the incident field amplitude into a
lobe centered on the specular direction, with the remaining sqrt(1 - S^2)
staying on the specular ray.  Foliage attenuates every ray segment by
Weissberger's exceedance model over the accumulated depth inside canopy
volumes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import geometry
from .scene import FoliageVolume, Scene

WEISSBERGER_MAX_DEPTH = 400.0  # m, model validity limit


@dataclass(frozen=True)
class ScatterParams:
    s: float = 0.45            # scattering factor (amplitude fraction)
    k_xpol: float = 0.4        # cross-polarized fraction of scattered power
    alpha_r: int = 4           # lobe exponent
    tile_size: float = 2.0     # m
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.s <= 1.0:
            raise ValueError("scattering factor must lie in [0, 1]")
        if not 0.0 <= self.k_xpol <= 1.0:
            raise ValueError("cross-polarization fraction must lie in [0, 1]")
        if not (isinstance(self.alpha_r, int) and self.alpha_r > 0):
            raise ValueError("lobe exponent must be a positive integer")
        if not self.tile_size > 0:
            raise ValueError("tile size must be > 0")


def specular_attenuation(s: float) -> float:
    """Amplitude left on the specular ray when a wall scatters: sqrt(1 - S^2)."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("scattering factor must lie in [0, 1]")
    return math.sqrt(1.0 - s * s)


@lru_cache(maxsize=32)
def lobe_normalization(alpha_r: int, n_quad: int = 512) -> float:
    """Hemisphere integral of ((1 + cos psi)/2)^alpha around the lobe axis.

    Computed by Gauss-Legendre quadrature and cached per exponent; dividing
    the lobe by this factor makes the total scattered power equal S^2 times
    the power intercepted by the tile.
    """
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    # psi from 0 to pi/2
    psi = 0.25 * math.pi * (nodes + 1.0)
    w = 0.25 * math.pi * weights
    integrand = ((1.0 + np.cos(psi)) / 2.0) ** alpha_r * np.sin(psi)
    return float(2.0 * math.pi * np.sum(w * integrand))


@dataclass(frozen=True)
class ScatterTile:
    center: np.ndarray
    normal: np.ndarray
    area: float


def directive_scatter_field(tile: ScatterTile, incident, scatter_dir,
                            r_s: float, params: ScatterParams):
    """Field scattered by one wall tile toward ``scatter_dir``.

    ``incident`` is (direction, E_rms at the tile).  Returns the
    (co-polarized, cross-polarized) RMS magnitudes at distance ``r_s``; their
    squared sum is the total scattered power density.  Directions into the
    back hemisphere scatter nothing.
    """
    inc_dir, e_inc = incident
    inc_dir = np.asarray(inc_dir, dtype=float)
    scatter_dir = np.asarray(scatter_dir, dtype=float)
    if not r_s > 0:
        raise ValueError("scatter distance must be > 0")
    n = tile.normal
    cos_i = -float(np.dot(inc_dir, n))
    if cos_i <= 0.0:
        return 0.0, 0.0
    if float(np.dot(scatter_dir, n)) <= 0.0:
        return 0.0, 0.0
    spec = inc_dir - 2.0 * float(np.dot(inc_dir, n)) * n
    cos_psi = float(np.clip(np.dot(scatter_dir, spec), -1.0, 1.0))
    lobe = ((1.0 + cos_psi) / 2.0) ** params.alpha_r
    f_alpha = lobe_normalization(params.alpha_r)
    es_sq = (params.s ** 2 * e_inc ** 2 * tile.area * cos_i
             / (f_alpha * r_s ** 2)) * lobe
    co = math.sqrt((1.0 - params.k_xpol) * es_sq)
    cross = math.sqrt(params.k_xpol * es_sq)
    return co, cross


# ---------------------------------------------------------------------------
# foliage
# ---------------------------------------------------------------------------

def foliage_depth(a, b, foliage: list[FoliageVolume]) -> float:
    """Length of the segment a->b inside the union of foliage volumes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    seg_len = float(np.linalg.norm(b - a))
    if seg_len < 1e-12 or not foliage:
        return 0.0
    intervals = []
    for fv in foliage:
        if fv.shape == "cylinder":
            cx, cy, r, z0, z1 = fv.params
            iv = geometry.segment_cylinder_interval(a, b, cx, cy, r, z0, z1)
        else:
            lo, hi = fv.params
            iv = geometry.segment_box_interval(a, b, np.asarray(lo), np.asarray(hi))
        if iv is not None and iv[1] > iv[0]:
            intervals.append(iv)
    return geometry.merge_intervals(intervals) * seg_len


def weissberger_loss(f_ghz, depth_m):
    """Weissberger foliage exceedance loss in dB.

    0.45 f^0.284 d for depths up to 14 m, 1.33 f^0.284 d^0.588 from 14 m to
    the 400 m model limit; deeper paths are clamped to 400 m with a warning.
    Accepts arrays.
    """
    f_ghz = np.asarray(f_ghz, dtype=float)
    depth = np.asarray(depth_m, dtype=float)
    if np.any(f_ghz <= 0):
        raise ValueError("frequency must be positive (GHz)")
    if np.any(depth < 0):
        raise ValueError("foliage depth must be >= 0")
    if np.any(depth > WEISSBERGER_MAX_DEPTH):
        warnings.warn("foliage depth exceeds the 400 m model range; clamping",
                      stacklevel=2)
        depth = np.minimum(depth, WEISSBERGER_MAX_DEPTH)
    fpow = f_ghz ** 0.284
    loss = np.where(depth <= 14.0,
                    0.45 * fpow * depth,
                    1.33 * fpow * np.maximum(depth, 1e-300) ** 0.588)
    return float(loss) if loss.ndim == 0 else loss


# ---------------------------------------------------------------------------
# wall tiling
# ---------------------------------------------------------------------------

class WallTiles:
    """Scatter tiles over every building wall of a scene.

    Tile centers sit on a tile_size lattice in the wall plane, jittered
    deterministically from the run seed; centers that leave their polygon
    are dropped.
    """

    def __init__(self, scene: Scene, params: ScatterParams, seed: int = 0):
        centers = []
        normals = []
        surf_ids = []
        rng = np.random.default_rng(seed)
        ts = params.tile_size
        for si, s in enumerate(scene.surfaces):
            if s.tag != "building_wall":
                continue
            u = geometry.unit(s.vertices[1] - s.vertices[0])
            v = np.cross(s.normal, u)
            pts2 = np.array([[np.dot(p - s.vertices[0], u),
                              np.dot(p - s.vertices[0], v)] for p in s.vertices])
            lo = pts2.min(axis=0)
            hi = pts2.max(axis=0)
            nu = max(1, int(math.floor((hi[0] - lo[0]) / ts)))
            nv = max(1, int(math.floor((hi[1] - lo[1]) / ts)))
            for iu in range(nu):
                for iv in range(nv):
                    cu = lo[0] + (iu + 0.5) * ts
                    cv = lo[1] + (iv + 0.5) * ts
                    ju, jv = rng.uniform(-0.25, 0.25, size=2) * ts
                    p = s.vertices[0] + (cu + ju) * u + (cv + jv) * v
                    if geometry.point_in_convex_polygon(p, s.vertices, s.normal,
                                                        tol=1e-9):
                        centers.append(p)
                        normals.append(s.normal)
                        surf_ids.append(si)
        self.centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        self.surf_ids = np.asarray(surf_ids, dtype=np.int32)
        self.area = ts * ts
        self.params = params

    def __len__(self):
        return len(self.centers)
