"""Compiled inner loops of the ray engine.

All kernels are deterministic: they take flat numpy arrays, visit geometry in
index order, and never depend on thread count or dict ordering.  Scene
geometry arrives triangulated with a uniform-grid acceleration structure
(CSR layout).  Receiver capture uses a second uniform grid over the receiver
set so the cost per ray segment stays proportional to the segment length.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# candidate row layout: [rx, n_refl, s1..s6, edge]
CAND_WIDTH = 9
MAX_SEQ = 6


# ---------------------------------------------------------------------------
# acceleration structures (built in plain numpy, traversed in numba)
# ---------------------------------------------------------------------------

def build_tri_grid(tri_v0, tri_e1, tri_e2, ncell=32):
    """Uniform grid over triangle soup; triangles are binned by AABB overlap."""
    nt = tri_v0.shape[0]
    if nt == 0:
        lo = np.zeros(3)
        hi = np.ones(3)
        dims = np.array([1, 1, 1], dtype=np.int32)
        return lo, hi, dims, np.zeros(2, dtype=np.int32), np.zeros(0, dtype=np.int32)
    v1 = tri_v0 + tri_e1
    v2 = tri_v0 + tri_e2
    lo = np.minimum(np.minimum(tri_v0.min(axis=0), v1.min(axis=0)), v2.min(axis=0))
    hi = np.maximum(np.maximum(tri_v0.max(axis=0), v1.max(axis=0)), v2.max(axis=0))
    pad = max(1e-6, 1e-9 * float(np.max(hi - lo)))
    lo = lo - pad
    hi = hi + pad
    dims = np.full(3, ncell, dtype=np.int32)
    cell = (hi - lo) / dims
    cell = np.maximum(cell, 1e-9)

    entries = []
    for t in range(nt):
        tlo = np.minimum(np.minimum(tri_v0[t], v1[t]), v2[t])
        thi = np.maximum(np.maximum(tri_v0[t], v1[t]), v2[t])
        i0 = np.clip(((tlo - lo) / cell).astype(np.int64), 0, dims - 1)
        i1 = np.clip(((thi - lo) / cell).astype(np.int64), 0, dims - 1)
        for ix in range(i0[0], i1[0] + 1):
            for iy in range(i0[1], i1[1] + 1):
                for iz in range(i0[2], i1[2] + 1):
                    entries.append(((ix * dims[1] + iy) * dims[2] + iz, t))
    entries.sort()
    ncells = int(dims[0] * dims[1] * dims[2])
    start = np.zeros(ncells + 1, dtype=np.int32)
    items = np.empty(len(entries), dtype=np.int32)
    for k, (c, t) in enumerate(entries):
        start[c + 1] += 1
        items[k] = t
    np.cumsum(start, out=start)
    return lo, hi, dims, start, items


def build_point_grid(points, cell_size=3.0, max_dim=128):
    """Uniform grid over a point set (receiver capture lookups)."""
    k = points.shape[0]
    lo = points.min(axis=0) - 1e-6 if k else np.zeros(3)
    hi = points.max(axis=0) + 1e-6 if k else np.ones(3)
    extent = np.maximum(hi - lo, 1e-6)
    cell = float(cell_size)
    dims = np.maximum(np.ceil(extent / cell).astype(np.int64), 1)
    while dims.max() > max_dim:
        cell *= 2.0
        dims = np.maximum(np.ceil(extent / cell).astype(np.int64), 1)
    dims = dims.astype(np.int32)
    idx = np.clip(((points - lo) / cell).astype(np.int64), 0, dims - 1)
    flat = (idx[:, 0] * dims[1] + idx[:, 1]) * dims[2] + idx[:, 2]
    order = np.lexsort((np.arange(k), flat))
    ncells = int(dims[0] * dims[1] * dims[2])
    start = np.zeros(ncells + 1, dtype=np.int32)
    np.add.at(start, flat + 1, 1)
    np.cumsum(start, out=start)
    items = order.astype(np.int32)
    return lo, hi, dims, np.float64(cell), start, items


# ---------------------------------------------------------------------------
# device helpers
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _tri_hit(v0, e1, e2, o, d):
    """Two-sided Moller-Trumbore; returns t (>0) or -1."""
    px = d[1] * e2[2] - d[2] * e2[1]
    py = d[2] * e2[0] - d[0] * e2[2]
    pz = d[0] * e2[1] - d[1] * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if -1e-14 < det < 1e-14:
        return -1.0
    inv = 1.0 / det
    sx = o[0] - v0[0]
    sy = o[1] - v0[1]
    sz = o[2] - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -1e-12 or u > 1.0 + 1e-12:
        return -1.0
    qx = sy * e1[2] - sz * e1[1]
    qy = sz * e1[0] - sx * e1[2]
    qz = sx * e1[1] - sy * e1[0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return -1.0
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if t <= 0.0:
        return -1.0
    return t


@njit(cache=True, nogil=True)
def _slab_range(o, d, lo, hi):
    """Parameter range where the ray o + t*d is inside the box; (1, 0) if none."""
    t0 = -1e300
    t1 = 1e300
    for k in range(3):
        dk = d[k]
        if dk > 1e-300 or dk < -1e-300:
            ta = (lo[k] - o[k]) / dk
            tb = (hi[k] - o[k]) / dk
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
        else:
            if o[k] < lo[k] or o[k] > hi[k]:
                return 1.0, 0.0
    return t0, t1


@njit(cache=True, nogil=True)
def ray_nearest(o, d, t_min, ex0, ex1, ex2,
                tri_v0, tri_e1, tri_e2, tri_surf,
                glo, ghi, gdims, gstart, gitems):
    """Nearest surface hit along a ray via 3D-DDA grid traversal.

    Ties in t are broken toward the smaller surface index.  Surfaces ex0..ex2
    are excluded (pass -1 for unused slots).  Returns (t, surface) with
    surface == -1 on a miss.
    """
    best_t = 1e300
    best_s = -1
    if tri_v0.shape[0] == 0:
        return best_t, best_s
    t0, t1 = _slab_range(o, d, glo, ghi)
    if t1 < t0 or t1 < t_min:
        return best_t, best_s
    if t0 < t_min:
        t0 = t_min
    if t0 < 0.0:
        t0 = 0.0
    cellx = (ghi[0] - glo[0]) / gdims[0]
    celly = (ghi[1] - glo[1]) / gdims[1]
    cellz = (ghi[2] - glo[2]) / gdims[2]
    eps = 1e-9 * (1.0 + abs(t0))
    px = o[0] + (t0 + eps) * d[0]
    py = o[1] + (t0 + eps) * d[1]
    pz = o[2] + (t0 + eps) * d[2]
    ix = int((px - glo[0]) / cellx)
    iy = int((py - glo[1]) / celly)
    iz = int((pz - glo[2]) / cellz)
    if ix < 0: ix = 0
    if iy < 0: iy = 0
    if iz < 0: iz = 0
    if ix >= gdims[0]: ix = gdims[0] - 1
    if iy >= gdims[1]: iy = gdims[1] - 1
    if iz >= gdims[2]: iz = gdims[2] - 1

    # per-axis DDA increments
    if d[0] > 0:
        stepx, tdx = 1, cellx / d[0]
        tmx = t0 + ((glo[0] + (ix + 1) * cellx) - (o[0] + t0 * d[0])) / d[0]
    elif d[0] < 0:
        stepx, tdx = -1, -cellx / d[0]
        tmx = t0 + ((glo[0] + ix * cellx) - (o[0] + t0 * d[0])) / d[0]
    else:
        stepx, tdx, tmx = 0, 1e300, 1e300
    if d[1] > 0:
        stepy, tdy = 1, celly / d[1]
        tmy = t0 + ((glo[1] + (iy + 1) * celly) - (o[1] + t0 * d[1])) / d[1]
    elif d[1] < 0:
        stepy, tdy = -1, -celly / d[1]
        tmy = t0 + ((glo[1] + iy * celly) - (o[1] + t0 * d[1])) / d[1]
    else:
        stepy, tdy, tmy = 0, 1e300, 1e300
    if d[2] > 0:
        stepz, tdz = 1, cellz / d[2]
        tmz = t0 + ((glo[2] + (iz + 1) * cellz) - (o[2] + t0 * d[2])) / d[2]
    elif d[2] < 0:
        stepz, tdz = -1, -cellz / d[2]
        tmz = t0 + ((glo[2] + iz * cellz) - (o[2] + t0 * d[2])) / d[2]
    else:
        stepz, tdz, tmz = 0, 1e300, 1e300

    while True:
        c = (ix * gdims[1] + iy) * gdims[2] + iz
        for k in range(gstart[c], gstart[c + 1]):
            t = gitems[k]
            s = tri_surf[t]
            if s == ex0 or s == ex1 or s == ex2:
                continue
            th = _tri_hit(tri_v0[t], tri_e1[t], tri_e2[t], o, d)
            if th > t_min:
                if th < best_t or (th == best_t and s < best_s):
                    best_t = th
                    best_s = s
        exit_t = tmx
        if tmy < exit_t:
            exit_t = tmy
        if tmz < exit_t:
            exit_t = tmz
        if best_s >= 0 and best_t <= exit_t + 1e-9:
            break
        if exit_t > t1 + 1e-9:
            break
        if tmx <= tmy and tmx <= tmz:
            ix += stepx
            tmx += tdx
            if ix < 0 or ix >= gdims[0]:
                break
        elif tmy <= tmz:
            iy += stepy
            tmy += tdy
            if iy < 0 or iy >= gdims[1]:
                break
        else:
            iz += stepz
            tmz += tdz
            if iz < 0 or iz >= gdims[2]:
                break
    if best_s < 0:
        return 1e300, -1
    return best_t, best_s


@njit(cache=True, nogil=True)
def segment_clear(a, b, ex0, ex1, ex2, ex3,
                  tri_v0, tri_e1, tri_e2, tri_surf,
                  glo, ghi, gdims, gstart, gitems):
    """True when the open segment a->b hits no surface (excluded ids skipped)."""
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    dz = b[2] - a[2]
    length = math.sqrt(dx * dx + dy * dy + dz * dz)
    if length < 1e-12 or tri_v0.shape[0] == 0:
        return True
    d = np.empty(3)
    d[0] = dx / length
    d[1] = dy / length
    d[2] = dz / length
    margin = 1e-6
    t0, t1 = _slab_range(a, d, glo, ghi)
    if t1 < t0 or t0 > length - margin or t1 < margin:
        return True
    lo_t = margin if t0 < margin else t0
    hi_t = (length - margin) if t1 > length - margin else t1

    cellx = (ghi[0] - glo[0]) / gdims[0]
    celly = (ghi[1] - glo[1]) / gdims[1]
    cellz = (ghi[2] - glo[2]) / gdims[2]
    eps = 1e-9 * (1.0 + abs(lo_t))
    px = a[0] + (lo_t + eps) * d[0]
    py = a[1] + (lo_t + eps) * d[1]
    pz = a[2] + (lo_t + eps) * d[2]
    ix = int((px - glo[0]) / cellx)
    iy = int((py - glo[1]) / celly)
    iz = int((pz - glo[2]) / cellz)
    if ix < 0: ix = 0
    if iy < 0: iy = 0
    if iz < 0: iz = 0
    if ix >= gdims[0]: ix = gdims[0] - 1
    if iy >= gdims[1]: iy = gdims[1] - 1
    if iz >= gdims[2]: iz = gdims[2] - 1
    if d[0] > 0:
        stepx, tdx = 1, cellx / d[0]
        tmx = lo_t + ((glo[0] + (ix + 1) * cellx) - (a[0] + lo_t * d[0])) / d[0]
    elif d[0] < 0:
        stepx, tdx = -1, -cellx / d[0]
        tmx = lo_t + ((glo[0] + ix * cellx) - (a[0] + lo_t * d[0])) / d[0]
    else:
        stepx, tdx, tmx = 0, 1e300, 1e300
    if d[1] > 0:
        stepy, tdy = 1, celly / d[1]
        tmy = lo_t + ((glo[1] + (iy + 1) * celly) - (a[1] + lo_t * d[1])) / d[1]
    elif d[1] < 0:
        stepy, tdy = -1, -celly / d[1]
        tmy = lo_t + ((glo[1] + iy * celly) - (a[1] + lo_t * d[1])) / d[1]
    else:
        stepy, tdy, tmy = 0, 1e300, 1e300
    if d[2] > 0:
        stepz, tdz = 1, cellz / d[2]
        tmz = lo_t + ((glo[2] + (iz + 1) * cellz) - (a[2] + lo_t * d[2])) / d[2]
    elif d[2] < 0:
        stepz, tdz = -1, -cellz / d[2]
        tmz = lo_t + ((glo[2] + iz * cellz) - (a[2] + lo_t * d[2])) / d[2]
    else:
        stepz, tdz, tmz = 0, 1e300, 1e300

    while True:
        c = (ix * gdims[1] + iy) * gdims[2] + iz
        for k in range(gstart[c], gstart[c + 1]):
            t = gitems[k]
            s = tri_surf[t]
            if s == ex0 or s == ex1 or s == ex2 or s == ex3:
                continue
            th = _tri_hit(tri_v0[t], tri_e1[t], tri_e2[t], a, d)
            if margin < th < length - margin:
                return False
        exit_t = tmx
        if tmy < exit_t:
            exit_t = tmy
        if tmz < exit_t:
            exit_t = tmz
        if exit_t > hi_t + 1e-9:
            return True
        if tmx <= tmy and tmx <= tmz:
            ix += stepx
            tmx += tdx
            if ix < 0 or ix >= gdims[0]:
                return True
        elif tmy <= tmz:
            iy += stepy
            tmy += tdy
            if iy < 0 or iy >= gdims[1]:
                return True
        else:
            iz += stepz
            tmz += tdz
            if iz < 0 or iz >= gdims[2]:
                return True


@njit(cache=True, nogil=True)
def _point_in_surface(p, sidx, surf_nverts, surf_verts, surf_normal, tol):
    nv = surf_nverts[sidx]
    nx = surf_normal[sidx, 0]
    ny = surf_normal[sidx, 1]
    nz = surf_normal[sidx, 2]
    for i in range(nv):
        j = i + 1
        if j == nv:
            j = 0
        ex = surf_verts[sidx, j, 0] - surf_verts[sidx, i, 0]
        ey = surf_verts[sidx, j, 1] - surf_verts[sidx, i, 1]
        ez = surf_verts[sidx, j, 2] - surf_verts[sidx, i, 2]
        wx = p[0] - surf_verts[sidx, i, 0]
        wy = p[1] - surf_verts[sidx, i, 1]
        wz = p[2] - surf_verts[sidx, i, 2]
        cx = ey * wz - ez * wy
        cy = ez * wx - ex * wz
        cz = ex * wy - ey * wx
        if cx * nx + cy * ny + cz * nz < -tol:
            return False
    return True


# ---------------------------------------------------------------------------
# SBR trace with receiver + edge capture
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _capture_segment(o, d, seg_len, s0, cap_slope,
                     rx_pos, rlo, rhi, rdims, rcell, rstart, ritems,
                     stamp, stamp_id,
                     rx_out, n_rx_out):
    """Append indices of receivers whose capture sphere the segment crosses."""
    count = n_rx_out
    r_hi = (s0 + seg_len) * cap_slope
    # clip the segment to the receiver bounding box grown by the max radius
    lo0 = rlo[0] - r_hi
    lo1 = rlo[1] - r_hi
    lo2 = rlo[2] - r_hi
    hi0 = rhi[0] + r_hi
    hi1 = rhi[1] + r_hi
    hi2 = rhi[2] + r_hi
    t0 = 0.0
    t1 = seg_len
    for k in range(3):
        dk = d[k]
        if k == 0:
            lok, hik, ok = lo0, hi0, o[0]
        elif k == 1:
            lok, hik, ok = lo1, hi1, o[1]
        else:
            lok, hik, ok = lo2, hi2, o[2]
        if dk > 1e-300 or dk < -1e-300:
            ta = (lok - ok) / dk
            tb = (hik - ok) / dk
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
        else:
            if ok < lok or ok > hik:
                return count
    if t1 <= t0:
        return count
    pad = int(r_hi / rcell) + 1
    # walk the clipped sub-segment in steps of one cell, testing the
    # neighborhood around each sample; duplicates removed via stamps
    nsteps = int((t1 - t0) / rcell) + 1
    for step in range(nsteps + 1):
        t = t0 + step * rcell
        if t > t1:
            t = t1
        cx = int((o[0] + t * d[0] - rlo[0]) / rcell)
        cy = int((o[1] + t * d[1] - rlo[1]) / rcell)
        cz = int((o[2] + t * d[2] - rlo[2]) / rcell)
        for ix in range(cx - pad, cx + pad + 1):
            if ix < 0 or ix >= rdims[0]:
                continue
            for iy in range(cy - pad, cy + pad + 1):
                if iy < 0 or iy >= rdims[1]:
                    continue
                for iz in range(cz - pad, cz + pad + 1):
                    if iz < 0 or iz >= rdims[2]:
                        continue
                    c = (ix * rdims[1] + iy) * rdims[2] + iz
                    for k in range(rstart[c], rstart[c + 1]):
                        ri = ritems[k]
                        if stamp[ri] == stamp_id:
                            continue
                        stamp[ri] = stamp_id
                        wx = rx_pos[ri, 0] - o[0]
                        wy = rx_pos[ri, 1] - o[1]
                        wz = rx_pos[ri, 2] - o[2]
                        tc = wx * d[0] + wy * d[1] + wz * d[2]
                        if tc < 0.0:
                            tc = 0.0
                        elif tc > seg_len:
                            tc = seg_len
                        mx = wx - tc * d[0]
                        my = wy - tc * d[1]
                        mz = wz - tc * d[2]
                        miss2 = mx * mx + my * my + mz * mz
                        rc = (s0 + tc) * cap_slope
                        if miss2 <= rc * rc:
                            rx_out[count] = ri
                            count += 1
                            if count >= rx_out.shape[0]:
                                return count
    return count


@njit(cache=True, nogil=True)
def _seg_seg_dist(p0, d, seg_len, q0, q1):
    """Distance between ray segment (p0, unit d, length) and segment q0-q1.

    Returns (distance, s along the ray segment).
    """
    d2x = q1[0] - q0[0]
    d2y = q1[1] - q0[1]
    d2z = q1[2] - q0[2]
    rx = p0[0] - q0[0]
    ry = p0[1] - q0[1]
    rz = p0[2] - q0[2]
    a = seg_len * seg_len
    e = d2x * d2x + d2y * d2y + d2z * d2z
    f = d2x * rx + d2y * ry + d2z * rz
    c = (d[0] * rx + d[1] * ry + d[2] * rz) * seg_len
    b = (d[0] * d2x + d[1] * d2y + d[2] * d2z) * seg_len
    denom = a * e - b * b
    if denom > 1e-30:
        s = (b * f - c * e) / denom
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
    else:
        s = 0.0
    if e > 1e-30:
        t = (b * s + f) / e
        if t < 0.0:
            t = 0.0
            s = -c / a
        elif t > 1.0:
            t = 1.0
            s = (b - c) / a
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
    else:
        t = 0.0
    px = p0[0] + s * seg_len * d[0] - (q0[0] + t * d2x)
    py = p0[1] + s * seg_len * d[1] - (q0[1] + t * d2y)
    pz = p0[2] + s * seg_len * d[2] - (q0[2] + t * d2z)
    return math.sqrt(px * px + py * py + pz * pz), s * seg_len


@njit(cache=True, nogil=True)
def trace_kernel(dirs, tx, max_refl, cap_slope,
                 world_lo, world_hi,
                 tri_v0, tri_e1, tri_e2, tri_surf, surf_normal,
                 glo, ghi, gdims, gstart, gitems,
                 rx_pos, rlo, rhi, rdims, rcell, rstart, ritems,
                 edge_p0, edge_p1, capture_edges,
                 cand_out, stamp):
    """Shoot one chunk of launch directions; emit candidate interaction rows.

    Row layout: [rx, n_refl, s1..s6, edge]; rx == -1 marks an edge-capture
    row (a reflection prefix that passed near a diffracting edge and still
    needs a receiver).  Returns the number of rows required; the caller must
    retry with a larger buffer if that exceeds cand_out.shape[0].
    """
    n_cand = 0
    max_cand = cand_out.shape[0]
    n_edges = edge_p0.shape[0]
    rx_buf = np.empty(rx_pos.shape[0] + 16, dtype=np.int32)
    seq = np.empty(MAX_SEQ, dtype=np.int32)
    o = np.empty(3)
    d = np.empty(3)
    stamp_id = 0
    for ray in range(dirs.shape[0]):
        o[0] = tx[0]
        o[1] = tx[1]
        o[2] = tx[2]
        d[0] = dirs[ray, 0]
        d[1] = dirs[ray, 1]
        d[2] = dirs[ray, 2]
        s0 = 0.0
        nref = 0
        last = -1
        alive = True
        while alive:
            t_hit, s_hit = ray_nearest(o, d, 1e-9, last, -1, -1,
                                       tri_v0, tri_e1, tri_e2, tri_surf,
                                       glo, ghi, gdims, gstart, gitems)
            if s_hit >= 0:
                seg_len = t_hit
            else:
                w0, w1 = _slab_range(o, d, world_lo, world_hi)
                seg_len = w1 if w1 > 0.0 else 0.0
            if seg_len > 1e-9:
                stamp_id += 1
                n_rx = _capture_segment(o, d, seg_len, s0, cap_slope,
                                        rx_pos, rlo, rhi, rdims, rcell,
                                        rstart, ritems, stamp, stamp_id,
                                        rx_buf, 0)
                for k in range(n_rx):
                    if n_cand < max_cand:
                        cand_out[n_cand, 0] = rx_buf[k]
                        cand_out[n_cand, 1] = nref
                        for m in range(MAX_SEQ):
                            cand_out[n_cand, 2 + m] = seq[m] if m < nref else -1
                        cand_out[n_cand, 8] = -1
                    n_cand += 1
                if capture_edges and nref >= 1:
                    for e in range(n_edges):
                        dist, s_at = _seg_seg_dist(o, d, seg_len,
                                                   edge_p0[e], edge_p1[e])
                        if dist <= (s0 + s_at) * cap_slope:
                            if n_cand < max_cand:
                                cand_out[n_cand, 0] = -1
                                cand_out[n_cand, 1] = nref
                                for m in range(MAX_SEQ):
                                    cand_out[n_cand, 2 + m] = seq[m] if m < nref else -1
                                cand_out[n_cand, 8] = e
                            n_cand += 1
            if s_hit >= 0 and nref < max_refl:
                nx = surf_normal[s_hit, 0]
                ny = surf_normal[s_hit, 1]
                nz = surf_normal[s_hit, 2]
                o[0] += t_hit * d[0]
                o[1] += t_hit * d[1]
                o[2] += t_hit * d[2]
                dot = d[0] * nx + d[1] * ny + d[2] * nz
                d[0] -= 2.0 * dot * nx
                d[1] -= 2.0 * dot * ny
                d[2] -= 2.0 * dot * nz
                s0 += t_hit
                seq[nref] = s_hit
                nref += 1
                last = s_hit
            else:
                alive = False
    return n_cand


# ---------------------------------------------------------------------------
# exact path correction (image theory), batched
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _mirror(p, sp, sn):
    dist = ((p[0] - sp[0]) * sn[0] + (p[1] - sp[1]) * sn[1]
            + (p[2] - sp[2]) * sn[2])
    return (p[0] - 2.0 * dist * sn[0],
            p[1] - 2.0 * dist * sn[1],
            p[2] - 2.0 * dist * sn[2])


@njit(cache=True, nogil=True)
def epc_specular_batch(cand, tx, rx_pos,
                       surf_nverts, surf_verts, surf_normal,
                       tri_v0, tri_e1, tri_e2, tri_surf,
                       glo, ghi, gdims, gstart, gitems,
                       ok_out, pts_out, npts_out, length_out):
    """Image-theory correction of specular candidate sequences.

    For each row the transmitter is mirrored through the sequence planes;
    reflection points come from intersecting the unfolded straight line with
    each plane.  Rows are rejected when a reflection point leaves its polygon
    or any leg is occluded.  pts_out[i, 0] is the transmitter, then the
    reflection points, then the receiver.
    """
    n = cand.shape[0]
    imgs = np.empty((MAX_SEQ + 1, 3))
    p_tmp = np.empty(3)
    a = np.empty(3)
    b = np.empty(3)
    for i in range(n):
        ok_out[i] = 0
        nref = cand[i, 1]
        rx = cand[i, 0]
        # forward images of the transmitter
        imgs[0, 0] = tx[0]
        imgs[0, 1] = tx[1]
        imgs[0, 2] = tx[2]
        bad = False
        for m in range(nref):
            s = cand[i, 2 + m]
            mx, my, mz = _mirror(imgs[m], surf_verts[s, 0], surf_normal[s])
            imgs[m + 1, 0] = mx
            imgs[m + 1, 1] = my
            imgs[m + 1, 2] = mz
        # unfolded length: final image to receiver
        dx = rx_pos[rx, 0] - imgs[nref, 0]
        dy = rx_pos[rx, 1] - imgs[nref, 1]
        dz = rx_pos[rx, 2] - imgs[nref, 2]
        length = math.sqrt(dx * dx + dy * dy + dz * dz)
        if length < 1e-9:
            continue
        # backtrack reflection points
        pts_out[i, nref + 1, 0] = rx_pos[rx, 0]
        pts_out[i, nref + 1, 1] = rx_pos[rx, 1]
        pts_out[i, nref + 1, 2] = rx_pos[rx, 2]
        tgt0 = rx_pos[rx, 0]
        tgt1 = rx_pos[rx, 1]
        tgt2 = rx_pos[rx, 2]
        for m in range(nref, 0, -1):
            s = cand[i, 2 + m - 1]
            sn = surf_normal[s]
            sp = surf_verts[s, 0]
            da = ((tgt0 - sp[0]) * sn[0] + (tgt1 - sp[1]) * sn[1]
                  + (tgt2 - sp[2]) * sn[2])
            db = ((imgs[m, 0] - sp[0]) * sn[0] + (imgs[m, 1] - sp[1]) * sn[1]
                  + (imgs[m, 2] - sp[2]) * sn[2])
            denom = da - db
            if abs(denom) < 1e-14:
                bad = True
                break
            t = da / denom
            if t <= 1e-12 or t >= 1.0 - 1e-12:
                bad = True
                break
            p_tmp[0] = tgt0 + t * (imgs[m, 0] - tgt0)
            p_tmp[1] = tgt1 + t * (imgs[m, 1] - tgt1)
            p_tmp[2] = tgt2 + t * (imgs[m, 2] - tgt2)
            if not _point_in_surface(p_tmp, s, surf_nverts, surf_verts,
                                     surf_normal, 1e-9):
                bad = True
                break
            pts_out[i, m, 0] = p_tmp[0]
            pts_out[i, m, 1] = p_tmp[1]
            pts_out[i, m, 2] = p_tmp[2]
            tgt0 = p_tmp[0]
            tgt1 = p_tmp[1]
            tgt2 = p_tmp[2]
        if bad:
            continue
        pts_out[i, 0, 0] = tx[0]
        pts_out[i, 0, 1] = tx[1]
        pts_out[i, 0, 2] = tx[2]
        # occlusion on every leg (the leg's own end surfaces excluded)
        clear = True
        for m in range(nref + 1):
            a[0] = pts_out[i, m, 0]
            a[1] = pts_out[i, m, 1]
            a[2] = pts_out[i, m, 2]
            b[0] = pts_out[i, m + 1, 0]
            b[1] = pts_out[i, m + 1, 1]
            b[2] = pts_out[i, m + 1, 2]
            exa = cand[i, 2 + m - 1] if m >= 1 else -1
            exb = cand[i, 2 + m] if m < nref else -1
            if not segment_clear(a, b, exa, exb, -1, -1,
                                 tri_v0, tri_e1, tri_e2, tri_surf,
                                 glo, ghi, gdims, gstart, gitems):
                clear = False
                break
        if not clear:
            continue
        ok_out[i] = 1
        npts_out[i] = nref + 2
        length_out[i] = length
    return 0


@njit(cache=True, nogil=True)
def epc_diffraction_batch(cand, tx, rx_pos,
                          surf_nverts, surf_verts, surf_normal,
                          edge_p0, edge_p1, edge_fa, edge_fb,
                          tri_v0, tri_e1, tri_e2, tri_surf,
                          glo, ghi, gdims, gstart, gitems,
                          ok_out, pts_out, npts_out,
                          s_in_out, s_out_out, edge_t_out):
    """Correct reflection-prefix + single-diffraction candidates.

    The transmitter image chain unfolds the reflections; the diffraction
    point minimizes (unfolded distance to edge + edge to receiver) along the
    edge (Fermat), found by bisection on the derivative to <1e-7 m.  Corner
    minimizers (at edge ends) are rejected, as are blocked or off-polygon
    geometries.
    """
    n = cand.shape[0]
    imgs = np.empty((MAX_SEQ + 1, 3))
    p_tmp = np.empty(3)
    a = np.empty(3)
    b = np.empty(3)
    ep = np.empty(3)
    for i in range(n):
        ok_out[i] = 0
        nref = cand[i, 1]
        rx = cand[i, 0]
        e = cand[i, 8]
        imgs[0, 0] = tx[0]
        imgs[0, 1] = tx[1]
        imgs[0, 2] = tx[2]
        for m in range(nref):
            s = cand[i, 2 + m]
            mx, my, mz = _mirror(imgs[m], surf_verts[s, 0], surf_normal[s])
            imgs[m + 1, 0] = mx
            imgs[m + 1, 1] = my
            imgs[m + 1, 2] = mz
        tsx = imgs[nref, 0]
        tsy = imgs[nref, 1]
        tsz = imgs[nref, 2]
        ax = edge_p0[e, 0]
        ay = edge_p0[e, 1]
        az = edge_p0[e, 2]
        ux = edge_p1[e, 0] - ax
        uy = edge_p1[e, 1] - ay
        uz = edge_p1[e, 2] - az
        elen = math.sqrt(ux * ux + uy * uy + uz * uz)
        if elen < 1e-9:
            continue
        ux /= elen
        uy /= elen
        uz /= elen

        # derivative of |E(t)-T*| + |E(t)-R| wrt arclength t
        rxp = rx_pos[rx]
        lo = 0.0
        hi = elen
        # f'(t) at the ends
        def_done = False
        glo_d = 0.0
        ghi_d = 0.0
        for endsel in range(2):
            t = lo if endsel == 0 else hi
            exx = ax + t * ux
            exy = ay + t * uy
            exz = az + t * uz
            d1x = exx - tsx
            d1y = exy - tsy
            d1z = exz - tsz
            l1 = math.sqrt(d1x * d1x + d1y * d1y + d1z * d1z)
            d2x = exx - rxp[0]
            d2y = exy - rxp[1]
            d2z = exz - rxp[2]
            l2 = math.sqrt(d2x * d2x + d2y * d2y + d2z * d2z)
            if l1 < 1e-9 or l2 < 1e-9:
                def_done = True
                break
            g = ((d1x * ux + d1y * uy + d1z * uz) / l1
                 + (d2x * ux + d2y * uy + d2z * uz) / l2)
            if endsel == 0:
                glo_d = g
            else:
                ghi_d = g
        if def_done:
            continue
        if glo_d >= 0.0 or ghi_d <= 0.0:
            continue  # minimizer at an edge end: corner, reject
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            exx = ax + mid * ux
            exy = ay + mid * uy
            exz = az + mid * uz
            d1x = exx - tsx
            d1y = exy - tsy
            d1z = exz - tsz
            l1 = math.sqrt(d1x * d1x + d1y * d1y + d1z * d1z)
            d2x = exx - rxp[0]
            d2y = exy - rxp[1]
            d2z = exz - rxp[2]
            l2 = math.sqrt(d2x * d2x + d2y * d2y + d2z * d2z)
            g = ((d1x * ux + d1y * uy + d1z * uz) / l1
                 + (d2x * ux + d2y * uy + d2z * uz) / l2)
            if g > 0.0:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-9:
                break
        t_star = 0.5 * (lo + hi)
        if t_star < 1e-6 or t_star > elen - 1e-6:
            continue
        ep[0] = ax + t_star * ux
        ep[1] = ay + t_star * uy
        ep[2] = az + t_star * uz
        d1x = ep[0] - tsx
        d1y = ep[1] - tsy
        d1z = ep[2] - tsz
        s_in = math.sqrt(d1x * d1x + d1y * d1y + d1z * d1z)
        d2x = rxp[0] - ep[0]
        d2y = rxp[1] - ep[1]
        d2z = rxp[2] - ep[2]
        s_out = math.sqrt(d2x * d2x + d2y * d2y + d2z * d2z)
        if s_in < 1e-9 or s_out < 1e-9:
            continue
        # backtrack reflection points from the edge point toward the images
        pts_out[i, nref + 1, 0] = ep[0]
        pts_out[i, nref + 1, 1] = ep[1]
        pts_out[i, nref + 1, 2] = ep[2]
        tgt0 = ep[0]
        tgt1 = ep[1]
        tgt2 = ep[2]
        bad = False
        for m in range(nref, 0, -1):
            s = cand[i, 2 + m - 1]
            sn = surf_normal[s]
            sp = surf_verts[s, 0]
            da = ((tgt0 - sp[0]) * sn[0] + (tgt1 - sp[1]) * sn[1]
                  + (tgt2 - sp[2]) * sn[2])
            db = ((imgs[m, 0] - sp[0]) * sn[0] + (imgs[m, 1] - sp[1]) * sn[1]
                  + (imgs[m, 2] - sp[2]) * sn[2])
            denom = da - db
            if abs(denom) < 1e-14:
                bad = True
                break
            t = da / denom
            if t <= 1e-12 or t >= 1.0 - 1e-12:
                bad = True
                break
            p_tmp[0] = tgt0 + t * (imgs[m, 0] - tgt0)
            p_tmp[1] = tgt1 + t * (imgs[m, 1] - tgt1)
            p_tmp[2] = tgt2 + t * (imgs[m, 2] - tgt2)
            if not _point_in_surface(p_tmp, s, surf_nverts, surf_verts,
                                     surf_normal, 1e-9):
                bad = True
                break
            pts_out[i, m, 0] = p_tmp[0]
            pts_out[i, m, 1] = p_tmp[1]
            pts_out[i, m, 2] = p_tmp[2]
            tgt0 = p_tmp[0]
            tgt1 = p_tmp[1]
            tgt2 = p_tmp[2]
        if bad:
            continue
        pts_out[i, 0, 0] = tx[0]
        pts_out[i, 0, 1] = tx[1]
        pts_out[i, 0, 2] = tx[2]
        # occlusion: reflection legs, then leg into edge and edge to receiver
        # (the wedge's own faces are excluded at the edge point)
        clear = True
        fa = edge_fa[e]
        fb = edge_fb[e]
        for m in range(nref + 1):
            a[0] = pts_out[i, m, 0]
            a[1] = pts_out[i, m, 1]
            a[2] = pts_out[i, m, 2]
            b[0] = pts_out[i, m + 1, 0]
            b[1] = pts_out[i, m + 1, 1]
            b[2] = pts_out[i, m + 1, 2]
            exa = cand[i, 2 + m - 1] if m >= 1 else -1
            exb = fa if m == nref else cand[i, 2 + m]
            exc = fb if m == nref else -1
            if not segment_clear(a, b, exa, exb, exc, -1,
                                 tri_v0, tri_e1, tri_e2, tri_surf,
                                 glo, ghi, gdims, gstart, gitems):
                clear = False
                break
        if clear:
            b[0] = rxp[0]
            b[1] = rxp[1]
            b[2] = rxp[2]
            if not segment_clear(ep, b, fa, fb, -1, -1,
                                 tri_v0, tri_e1, tri_e2, tri_surf,
                                 glo, ghi, gdims, gstart, gitems):
                clear = False
        if not clear:
            continue
        ok_out[i] = 1
        npts_out[i] = nref + 3
        pts_out[i, nref + 2, 0] = rxp[0]
        pts_out[i, nref + 2, 1] = rxp[1]
        pts_out[i, nref + 2, 2] = rxp[2]
        s_in_out[i] = s_in
        s_out_out[i] = s_out
        edge_t_out[i] = t_star
    return 0


# ---------------------------------------------------------------------------
# visibility batches (scatter tiles, edge prefilters)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def visibility_matrix(points_a, surf_a1, surf_a2, points_b,
                      tri_v0, tri_e1, tri_e2, tri_surf,
                      glo, ghi, gdims, gstart, gitems, out):
    """out[i, j] = segment a_i -> b_j is unobstructed (a's own surfaces excluded)."""
    for i in range(points_a.shape[0]):
        a = points_a[i]
        for j in range(points_b.shape[0]):
            out[i, j] = segment_clear(a, points_b[j], surf_a1[i], surf_a2[i],
                                      -1, -1,
                                      tri_v0, tri_e1, tri_e2, tri_surf,
                                      glo, ghi, gdims, gstart, gitems)
    return 0


@njit(cache=True, nogil=True)
def points_visible_from(origin, ex_origin, points, surf_pts,
                        tri_v0, tri_e1, tri_e2, tri_surf,
                        glo, ghi, gdims, gstart, gitems, out):
    """Visibility of each point from one origin (each point's surface excluded)."""
    for j in range(points.shape[0]):
        out[j] = segment_clear(origin, points[j], ex_origin, surf_pts[j],
                               -1, -1,
                               tri_v0, tri_e1, tri_e2, tri_surf,
                               glo, ghi, gdims, gstart, gitems)
    return 0


# ---------------------------------------------------------------------------
# foliage depth
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _segment_foliage(ax, ay, az, bx, by, bz, cyl, box_lo, box_hi):
    """Length of one segment inside the union of foliage volumes."""
    dx = bx - ax
    dy = by - ay
    dz = bz - az
    seg_len = math.sqrt(dx * dx + dy * dy + dz * dz)
    if seg_len < 1e-12:
        return 0.0
    n_max = cyl.shape[0] + box_lo.shape[0]
    t0s = np.empty(n_max)
    t1s = np.empty(n_max)
    n_iv = 0
    for c in range(cyl.shape[0]):
        cx, cy, r, z0, z1 = cyl[c, 0], cyl[c, 1], cyl[c, 2], cyl[c, 3], cyl[c, 4]
        t0 = 0.0
        t1 = 1.0
        if abs(dz) < 1e-15:
            if az < z0 or az > z1:
                continue
        else:
            ta = (z0 - az) / dz
            tb = (z1 - az) / dz
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                continue
        px = ax - cx
        py = ay - cy
        qa = dx * dx + dy * dy
        qb = 2.0 * (px * dx + py * dy)
        qc = px * px + py * py - r * r
        if qa < 1e-15:
            if qc > 0.0:
                continue
        else:
            disc = qb * qb - 4.0 * qa * qc
            if disc <= 0.0:
                continue
            sq = math.sqrt(disc)
            ra = (-qb - sq) / (2.0 * qa)
            rb = (-qb + sq) / (2.0 * qa)
            if ra > t0:
                t0 = ra
            if rb < t1:
                t1 = rb
        if t1 > t0:
            t0s[n_iv] = t0
            t1s[n_iv] = t1
            n_iv += 1
    for bi in range(box_lo.shape[0]):
        t0 = 0.0
        t1 = 1.0
        ok = True
        for k in range(3):
            if k == 0:
                av, dv = ax, dx
            elif k == 1:
                av, dv = ay, dy
            else:
                av, dv = az, dz
            if abs(dv) < 1e-15:
                if av < box_lo[bi, k] or av > box_hi[bi, k]:
                    ok = False
                    break
            else:
                ta = (box_lo[bi, k] - av) / dv
                tb = (box_hi[bi, k] - av) / dv
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
                if t0 > t1:
                    ok = False
                    break
        if ok and t1 > t0:
            t0s[n_iv] = t0
            t1s[n_iv] = t1
            n_iv += 1
    if n_iv == 0:
        return 0.0
    # insertion sort by t0, then merge
    for i in range(1, n_iv):
        k0 = t0s[i]
        k1 = t1s[i]
        j = i - 1
        while j >= 0 and t0s[j] > k0:
            t0s[j + 1] = t0s[j]
            t1s[j + 1] = t1s[j]
            j -= 1
        t0s[j + 1] = k0
        t1s[j + 1] = k1
    total = 0.0
    cur0 = t0s[0]
    cur1 = t1s[0]
    for i in range(1, n_iv):
        if t0s[i] > cur1:
            total += cur1 - cur0
            cur0 = t0s[i]
            cur1 = t1s[i]
        elif t1s[i] > cur1:
            cur1 = t1s[i]
    total += cur1 - cur0
    return total * seg_len


@njit(cache=True, nogil=True)
def foliage_depth_paths(pts, npts, cyl, box_lo, box_hi, out):
    """Total foliage depth along each multi-segment path."""
    for i in range(pts.shape[0]):
        total = 0.0
        for m in range(npts[i] - 1):
            total += _segment_foliage(pts[i, m, 0], pts[i, m, 1], pts[i, m, 2],
                                      pts[i, m + 1, 0], pts[i, m + 1, 1],
                                      pts[i, m + 1, 2], cyl, box_lo, box_hi)
        out[i] = total
    return 0


@njit(cache=True, nogil=True)
def foliage_depth_segments(a, b, cyl, box_lo, box_hi, out):
    for i in range(a.shape[0]):
        out[i] = _segment_foliage(a[i, 0], a[i, 1], a[i, 2],
                                  b[i, 0], b[i, 1], b[i, 2],
                                  cyl, box_lo, box_hi)
    return 0
