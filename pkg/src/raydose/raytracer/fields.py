"""Per-path complex fields and their coherent combination at receivers.

Scalar-phasor model: each path carries one complex RMS phasor whose
magnitude is sqrt(30 P G(launch)) / spreading * product of interaction
coefficient magnitudes * foliage factor and whose phase is -k * length plus
the interaction coefficient phases.  Polarization is tracked as a real unit
vector only to select the Fresnel branch (TE vs TM) at each bounce and the
soft/hard branch at a diffraction; the branch reference is chosen so that
relative signs between paths stay consistent for near-vertical polarization
over horizontal ground and vertical walls, which dominate this scene class.
Receivers are isotropic and polarization-agnostic: co-polarized scattered
fields join the coherent sum, cross-polarized scatter adds as power.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .. import kernels
from ..antenna import dipole_gain
from ..scene import MaterialKind, Scene, complex_permittivity
from ..scattering import (ScatterParams, ScatterTile, WallTiles,
                          directive_scatter_field, foliage_depth,
                          specular_attenuation, weissberger_loss)
from .coefficients import (TE, TM, fresnel_reflection, slab_reflection,
                           utd_coefficient)
from .params import PropagationPath, received_power_dbm

_KIND_DHS = 0
_KIND_OLD = 1
_KIND_PEC = 2


class FieldEvaluator:
    """Vectorized field composition for one scene at one frequency."""

    def __init__(self, scene: Scene, edges=None,
                 scatter: Optional[ScatterParams] = None):
        self.scene = scene
        self.frequency = scene.frequency
        self.wavelength = 299792458.0 / scene.frequency
        self.k = 2.0 * math.pi / self.wavelength
        self.scatter = scatter if (scatter is not None and scatter.enabled) else None

        ns = max(len(scene.surfaces), 1)
        self.surf_kind = np.zeros(ns, dtype=np.int8)
        self.surf_eps = np.ones(ns, dtype=complex)
        self.surf_thick = np.zeros(ns)
        self.surf_scatter = np.zeros(ns, dtype=bool)
        self.surf_normal = np.zeros((ns, 3))
        for si, s in enumerate(scene.surfaces):
            m = scene.materials[s.material]
            self.surf_normal[si] = s.normal
            if m.kind is MaterialKind.PEC:
                self.surf_kind[si] = _KIND_PEC
            else:
                self.surf_eps[si] = complex_permittivity(m, scene.frequency)
                self.surf_kind[si] = (_KIND_OLD if m.kind is MaterialKind.OLD
                                      else _KIND_DHS)
                self.surf_thick[si] = m.thickness
            self.surf_scatter[si] = (s.tag == "building_wall")

        self.edges = list(edges) if edges is not None else list(scene.edges)
        ne = max(len(self.edges), 1)
        self.edge_dir = np.zeros((ne, 3))
        self.edge_ta = np.zeros((ne, 3))
        self.edge_na = np.zeros((ne, 3))
        self.edge_n = np.full(ne, 2.0)
        self.edge_fa = np.zeros(ne, dtype=np.int32)
        self.edge_fb = np.zeros(ne, dtype=np.int32)
        for ei, e in enumerate(self.edges):
            self.edge_dir[ei] = (e.p1 - e.p0) / np.linalg.norm(e.p1 - e.p0)
            self.edge_ta[ei] = e.tangent_a
            self.edge_na[ei] = e.normal_a
            self.edge_n[ei] = e.n_wedge
            self.edge_fa[ei] = e.face_a
            self.edge_fb[ei] = e.face_b

        cyls = [fv.params for fv in scene.foliage if fv.shape == "cylinder"]
        boxes = [fv.params for fv in scene.foliage if fv.shape == "box"]
        self.fol_cyl = np.asarray(cyls, dtype=np.float64).reshape(-1, 5)
        self.fol_box_lo = np.asarray([b[0] for b in boxes], dtype=np.float64).reshape(-1, 3)
        self.fol_box_hi = np.asarray([b[1] for b in boxes], dtype=np.float64).reshape(-1, 3)
        self.has_foliage = bool(len(cyls) or len(boxes))

    # -- shared helpers -----------------------------------------------------

    def _reflection_pair(self, sids, theta):
        """(TE, TM) reflection coefficients for surface indices at theta."""
        g_te = np.empty(len(sids), dtype=complex)
        g_tm = np.empty(len(sids), dtype=complex)
        kinds = self.surf_kind[sids]
        for kind in (_KIND_DHS, _KIND_OLD, _KIND_PEC):
            m = kinds == kind
            if not np.any(m):
                continue
            if kind == _KIND_PEC:
                g_te[m] = -1.0
                g_tm[m] = 1.0
            elif kind == _KIND_DHS:
                eps = self.surf_eps[sids[m]]
                g_te[m] = fresnel_reflection(eps, theta[m], TE)
                g_tm[m] = fresnel_reflection(eps, theta[m], TM)
            else:
                eps = self.surf_eps[sids[m]]
                th = self.surf_thick[sids[m]]
                g_te[m] = slab_reflection(eps, theta[m], TE, th, self.k)
                g_tm[m] = slab_reflection(eps, theta[m], TM, th, self.k)
        return g_te, g_tm

    def _foliage_amp(self, pts, npts):
        """Amplitude factor from Weissberger loss over path foliage depth."""
        if not self.has_foliage:
            return np.ones(len(pts))
        depth = np.empty(len(pts))
        kernels.foliage_depth_paths(pts, npts, self.fol_cyl,
                                    self.fol_box_lo, self.fol_box_hi, depth)
        loss_db = weissberger_loss(self.frequency / 1e9, depth)
        return 10.0 ** (-np.atleast_1d(loss_db) / 20.0)

    @staticmethod
    def _launch_polarization(k_hat, axis):
        """Initial polarization: the dipole's theta direction at launch."""
        p = k_hat * (k_hat @ axis)[:, None] - axis[None, :]
        nrm = np.linalg.norm(p, axis=1)
        bad = nrm < 1e-9
        if np.any(bad):
            # axial launch: gain is zero there, any perpendicular works
            alt = np.cross(k_hat[bad], np.array([1.0, 0.3, 0.2]))
            alt_n = np.linalg.norm(alt, axis=1)
            alt_n[alt_n < 1e-12] = 1.0
            p[bad] = alt / alt_n[:, None]
            nrm[bad] = 1.0
        return p / nrm[:, None]

    def _reflection_chain(self, pts, nref, sids, axis):
        """Apply the reflection coefficients of a same-length path group.

        Returns (complex coefficient product, final polarization direction,
        final propagation direction).
        """
        n_paths = len(pts)
        coeff = np.ones(n_paths, dtype=complex)
        k_hat = pts[:, 1] - pts[:, 0]
        k_hat /= np.linalg.norm(k_hat, axis=1)[:, None]
        p_hat = self._launch_polarization(k_hat, axis)
        s_att = (specular_attenuation(self.scatter.s)
                 if self.scatter is not None else 1.0)
        for m in range(nref):
            s_m = sids[:, m]
            n_hat = self.surf_normal[s_m].copy()
            flip = np.einsum("ij,ij->i", k_hat, n_hat) > 0.0
            n_hat[flip] = -n_hat[flip]
            cos_i = -np.einsum("ij,ij->i", k_hat, n_hat)
            cos_i = np.clip(cos_i, 1e-12, 1.0)
            theta = np.arccos(cos_i)
            theta = np.minimum(theta, math.pi / 2 - 1e-9)
            e_te = np.cross(k_hat, n_hat)
            te_n = np.linalg.norm(e_te, axis=1)
            degen = te_n < 1e-9
            # normal incidence: align the TE reference with the field itself
            e_te[degen] = p_hat[degen]
            te_n[degen] = 1.0
            e_te /= te_n[:, None]
            f_te = np.einsum("ij,ij->i", p_hat, e_te) ** 2
            use_te = f_te >= 0.5
            g_te, g_tm = self._reflection_pair(s_m, theta)
            coeff *= np.where(use_te, g_te, g_tm)
            if self.scatter is not None:
                coeff[self.surf_scatter[s_m]] *= s_att
            # next leg direction straight from the corrected points
            k_next = pts[:, m + 2] - pts[:, m + 1]
            k_next /= np.linalg.norm(k_next, axis=1)[:, None]
            e_par_i = np.cross(e_te, k_hat)
            e_par_r = np.cross(e_te, k_next)
            sign_tm = np.where(np.einsum("ij,ij->i", p_hat, e_par_i) >= 0.0, 1.0, -1.0)
            sign_te = np.where(np.einsum("ij,ij->i", p_hat, e_te) >= 0.0, 1.0, -1.0)
            p_new_te = e_te * sign_te[:, None]
            p_new_tm = e_par_r * sign_tm[:, None]
            p_hat = np.where(use_te[:, None], p_new_te, p_new_tm)
            k_hat = k_next
        return coeff, p_hat, k_hat

    # -- path groups ---------------------------------------------------------

    def specular_fields(self, cand, pts, lengths, tx):
        """Complex fields for validated specular rows (grouped by bounce count)."""
        fields = np.zeros(len(cand), dtype=complex)
        if len(cand) == 0:
            return fields
        power = tx.input_power
        for nref in np.unique(cand[:, 1]):
            sel = np.nonzero(cand[:, 1] == nref)[0]
            p = pts[sel]
            launch = p[:, 1] - p[:, 0]
            launch /= np.linalg.norm(launch, axis=1)[:, None]
            cos_t = np.clip(launch @ tx.axis, -1.0, 1.0)
            gain = dipole_gain(np.arccos(cos_t), tx.peak_gain_dbi)
            amp = np.sqrt(30.0 * power * gain)
            coeff, _, _ = self._reflection_chain(p, int(nref), cand[sel, 2:8],
                                                 tx.axis)
            fol = self._foliage_amp(p, np.full(len(sel), nref + 2, np.int32))
            ln = lengths[sel]
            fields[sel] = (amp / ln) * coeff * fol * np.exp(-1j * self.k * ln)
        return fields

    def diffraction_fields(self, cand, pts, s_in, s_out, tx):
        """Complex fields for validated single-diffraction rows."""
        fields = np.zeros(len(cand), dtype=complex)
        if len(cand) == 0:
            return fields
        power = tx.input_power
        for nref in np.unique(cand[:, 1]):
            sel = np.nonzero(cand[:, 1] == nref)[0]
            p = pts[sel]
            nr = int(nref)
            launch = p[:, 1] - p[:, 0]
            launch /= np.linalg.norm(launch, axis=1)[:, None]
            cos_t = np.clip(launch @ tx.axis, -1.0, 1.0)
            gain = dipole_gain(np.arccos(cos_t), tx.peak_gain_dbi)
            amp = np.sqrt(30.0 * power * gain)
            coeff, p_hat, _ = self._reflection_chain(p, nr, cand[sel, 2:8],
                                                     tx.axis)

            eids = cand[sel, 8]
            d_in = p[:, nr + 1] - p[:, nr]
            d_in /= np.linalg.norm(d_in, axis=1)[:, None]
            d_out = p[:, nr + 2] - p[:, nr + 1]
            d_out /= np.linalg.norm(d_out, axis=1)[:, None]
            e_hat = self.edge_dir[eids]
            t_a = self.edge_ta[eids]
            n_a = self.edge_na[eids]
            n_w = self.edge_n[eids]

            cb = np.clip(np.einsum("ij,ij->i", d_in, e_hat), -1.0, 1.0)
            beta0 = np.clip(np.arccos(cb), 1e-6, math.pi - 1e-6)

            def ext_angle(v):
                q = v - np.einsum("ij,ij->i", v, e_hat)[:, None] * e_hat
                qn = np.linalg.norm(q, axis=1)
                qn[qn < 1e-12] = 1.0
                q = q / qn[:, None]
                a = np.arctan2(np.einsum("ij,ij->i", q, n_a),
                               np.einsum("ij,ij->i", q, t_a))
                a[a < 0.0] += 2.0 * math.pi
                return a

            phi_p = ext_angle(-d_in)
            phi = ext_angle(d_out)

            soft = np.einsum("ij,ij->i", p_hat, e_hat) ** 2 >= 0.5
            si = s_in[sel]
            so = s_out[sel]
            L = si * so * np.sin(beta0) ** 2 / (si + so)
            r0 = np.empty(len(sel), dtype=complex)
            rn = np.empty(len(sel), dtype=complex)
            for pol, mask in ((TE, soft), (TM, ~soft)):
                if not np.any(mask):
                    continue
                th0 = _luebbers_theta(phi_p[mask])
                thn = _luebbers_theta(n_w[mask] * math.pi - phi[mask])
                te0, tm0 = self._reflection_pair(self.edge_fa[eids[mask]], th0)
                ten, tmn = self._reflection_pair(self.edge_fb[eids[mask]], thn)
                r0[mask] = te0 if pol == TE else tm0
                rn[mask] = ten if pol == TE else tmn
            D = utd_coefficient(self.k, n_w, beta0, phi, phi_p, L, r0, rn)
            spread = np.sqrt(si * so * (si + so))
            fol = self._foliage_amp(p, np.full(len(sel), nr + 3, np.int32))
            fields[sel] = (amp * coeff * D / spread * fol
                           * np.exp(-1j * self.k * (si + so)))
        return fields


def _luebbers_theta(grazing):
    """Fold a face grazing angle into an incidence angle from the normal."""
    g = np.abs(np.mod(grazing, 2.0 * math.pi))
    g = np.where(g > math.pi, 2.0 * math.pi - g, g)
    return np.clip(np.abs(math.pi / 2.0 - g), 0.0, math.pi / 2 - 1e-9)


# ---------------------------------------------------------------------------
# public per-path operations
# ---------------------------------------------------------------------------

def path_field(path: PropagationPath, tx, scene: Scene,
               scatter: Optional[ScatterParams] = None,
               tiles: Optional[WallTiles] = None) -> complex:
    """Complex RMS phasor contributed by one corrected path at its receiver."""
    kinds = [k for k, _ in path.interactions]
    if "scatter" in kinds:
        if tiles is None:
            raise ValueError("scatter paths need the wall tiling")
        ti = next(arg for k, arg in path.interactions if k == "scatter")
        tile = ScatterTile(tiles.centers[ti], tiles.normals[ti], tiles.area)
        tx_pos = path.points[0]
        inc_dir = (tile.center - tx_pos) / np.linalg.norm(tile.center - tx_pos)
        r_i = float(np.linalg.norm(tile.center - tx_pos))
        theta = math.acos(float(np.clip(inc_dir @ tx.axis, -1, 1)))
        e_inc = math.sqrt(30.0 * tx.input_power
                          * dipole_gain(theta, tx.peak_gain_dbi)) / r_i
        e_inc *= 10.0 ** (-weissberger_loss(
            scene.frequency / 1e9,
            foliage_depth(tx_pos, tile.center, scene.foliage)) / 20.0)
        rx = path.points[-1]
        out_dir = (rx - tile.center) / np.linalg.norm(rx - tile.center)
        r_s = float(np.linalg.norm(rx - tile.center))
        co, _ = directive_scatter_field(tile, (inc_dir, e_inc), out_dir, r_s,
                                        scatter or ScatterParams())
        co *= 10.0 ** (-weissberger_loss(
            scene.frequency / 1e9,
            foliage_depth(tile.center, rx, scene.foliage)) / 20.0)
        k = 2.0 * math.pi * scene.frequency / 299792458.0
        return co * np.exp(-1j * k * (r_i + r_s))

    ev = FieldEvaluator(scene, scatter=scatter)
    refl = [arg for k, arg in path.interactions if k == "reflect"]
    edge = next((arg for k, arg in path.interactions if k == "diffract"), None)
    row = np.full((1, kernels.CAND_WIDTH), -1, dtype=np.int32)
    row[0, 1] = len(refl)
    for i, s in enumerate(refl):
        row[0, 2 + i] = s
    pts = np.zeros((1, kernels.MAX_SEQ + 3, 3))
    pts[0, :len(path.points)] = path.points
    if edge is None:
        return complex(ev.specular_fields(
            row, pts, np.array([path.total_length]), tx)[0])
    row[0, 8] = edge
    edge_point = path.points[len(refl) + 1]
    s_out = float(np.linalg.norm(path.points[-1] - edge_point))
    s_in = path.total_length - s_out
    return complex(ev.diffraction_fields(row, pts, np.array([s_in]),
                                         np.array([s_out]), tx)[0])


def total_field(paths, wavelength: float, rx_threshold_dbm: float = -250.0,
                xpol_power: float = 0.0):
    """Coherent receiver sum of one receiver's paths.

    Paths are summed in a deterministic order (sorted by interaction key);
    cross-polarized scattered power, which carries no stable phase reference
    relative to the co-polarized sum, adds as power.  Returns a dict with
    E_rms, P_dBm, path_count and the discarded flag.
    """
    if isinstance(paths, (list, tuple)):
        keyed = sorted(paths, key=lambda p: tuple(
            (k, -1 if a is None else int(a)) for k, a in p.interactions))
        phasors = np.array([p.field for p in keyed], dtype=complex)
    else:
        phasors = np.asarray(paths, dtype=complex)
    coherent = complex(np.sum(phasors)) if len(phasors) else 0.0
    e = math.sqrt(abs(coherent) ** 2 + max(xpol_power, 0.0))
    p_dbm = received_power_dbm(e, wavelength)
    return {
        "E_rms": e,
        "P_dBm": p_dbm,
        "path_count": int(len(phasors)),
        "discarded": bool(p_dbm < rx_threshold_dbm),
    }
