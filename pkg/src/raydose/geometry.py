"""Small geometric utilities shared by the scene model and the ray engine.

Everything here works on plain numpy arrays; the hot loops live in
:mod:`raydose.kernels`.
"""

from __future__ import annotations

import numpy as np

COPLANAR_TOL = 1e-6  # m


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize a vector, raising on (near) zero length."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-15:
        raise ValueError("cannot normalize zero-length vector")
    return v / n


def polygon_normal(vertices: np.ndarray) -> np.ndarray:
    """Unit normal of a planar polygon (right-hand rule over vertex order)."""
    v = np.asarray(vertices, dtype=float)
    # Newell's method: robust for any convex polygon
    n = np.zeros(3)
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        n[0] += (a[1] - b[1]) * (a[2] + b[2])
        n[1] += (a[2] - b[2]) * (a[0] + b[0])
        n[2] += (a[0] - b[0]) * (a[1] + b[1])
    return unit(n)


def coplanarity_error(vertices: np.ndarray) -> float:
    """Max distance of any vertex from the plane of the first three."""
    v = np.asarray(vertices, dtype=float)
    if len(v) <= 3:
        return 0.0
    n = unit(np.cross(v[1] - v[0], v[2] - v[0]))
    return float(np.max(np.abs((v - v[0]) @ n)))


def is_convex_polygon(vertices: np.ndarray, normal: np.ndarray) -> bool:
    v = np.asarray(vertices, dtype=float)
    m = len(v)
    for i in range(m):
        e1 = v[(i + 1) % m] - v[i]
        e2 = v[(i + 2) % m] - v[(i + 1) % m]
        if np.dot(np.cross(e1, e2), normal) < -1e-12:
            return False
    return True


def point_in_convex_polygon(p: np.ndarray, vertices: np.ndarray,
                            normal: np.ndarray, tol: float = 1e-9) -> bool:
    """Point-on-plane test against the polygon boundary (inclusive)."""
    v = np.asarray(vertices, dtype=float)
    m = len(v)
    for i in range(m):
        edge = v[(i + 1) % m] - v[i]
        if np.dot(np.cross(edge, p - v[i]), normal) < -tol:
            return False
    return True


def mirror_point(p: np.ndarray, plane_point: np.ndarray, plane_normal: np.ndarray) -> np.ndarray:
    d = np.dot(p - plane_point, plane_normal)
    return p - 2.0 * d * plane_normal


def reflect_direction(d: np.ndarray, normal: np.ndarray) -> np.ndarray:
    return d - 2.0 * np.dot(d, normal) * normal


def segment_segment_distance(p0, p1, q0, q1):
    """Min distance between two 3D segments plus the closest parameters (s, t)."""
    p0 = np.asarray(p0, float); p1 = np.asarray(p1, float)
    q0 = np.asarray(q0, float); q1 = np.asarray(q1, float)
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    if a < 1e-30 and e < 1e-30:
        return float(np.linalg.norm(r)), 0.0, 0.0
    if a < 1e-30:
        s = 0.0
        t = np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e < 1e-30:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-30 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    closest_p = p0 + s * d1
    closest_q = q0 + t * d2
    return float(np.linalg.norm(closest_p - closest_q)), float(s), float(t)


def segment_box_interval(a, b, lo, hi):
    """Parameter interval [t0, t1] of segment a->b inside an AABB, or None."""
    a = np.asarray(a, float)
    d = np.asarray(b, float) - a
    t0, t1 = 0.0, 1.0
    for k in range(3):
        if abs(d[k]) < 1e-15:
            if a[k] < lo[k] or a[k] > hi[k]:
                return None
        else:
            ta = (lo[k] - a[k]) / d[k]
            tb = (hi[k] - a[k]) / d[k]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 > t1:
                return None
    return t0, t1


def segment_cylinder_interval(a, b, cx, cy, radius, z0, z1):
    """Parameter interval of segment a->b inside a vertical cylinder, or None."""
    a = np.asarray(a, float)
    d = np.asarray(b, float) - a
    # z slab
    t0, t1 = 0.0, 1.0
    if abs(d[2]) < 1e-15:
        if a[2] < z0 or a[2] > z1:
            return None
    else:
        ta = (z0 - a[2]) / d[2]
        tb = (z1 - a[2]) / d[2]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return None
    # radial quadratic in t
    px, py = a[0] - cx, a[1] - cy
    qa = d[0] * d[0] + d[1] * d[1]
    qb = 2.0 * (px * d[0] + py * d[1])
    qc = px * px + py * py - radius * radius
    if qa < 1e-15:
        if qc > 0.0:
            return None
        return t0, t1
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0:
        return None
    sq = np.sqrt(disc)
    ra = (-qb - sq) / (2.0 * qa)
    rb = (-qb + sq) / (2.0 * qa)
    t0 = max(t0, ra)
    t1 = min(t1, rb)
    if t0 >= t1:
        return None
    return t0, t1


def merge_intervals(intervals):
    """Union length of a list of (t0, t1) intervals."""
    if not intervals:
        return 0.0
    ivs = sorted(intervals)
    total = 0.0
    cur_lo, cur_hi = ivs[0]
    for lo, hi in ivs[1:]:
        if lo > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    total += cur_hi - cur_lo
    return total
