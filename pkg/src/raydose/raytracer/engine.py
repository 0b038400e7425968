"""Full multipath solve: SBR discovery, exact correction, field accumulation.

The engine is deterministic by construction: candidate rows are canonicalized
with a sorted unique pass (so chunking across workers cannot change anything
downstream), field contributions are accumulated in that canonical order, and
scatter tiles are visited in their fixed build order.  Fields from different
transmitters are mutually incoherent (independent modulated sources) and
combine as power by default; a coherent mode exists for sensitivity checks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..antenna import Transmitter, dipole_gain
from ..scene import Scene
from ..scattering import ScatterParams, WallTiles, lobe_normalization, weissberger_loss
from .epc import correct_diffraction_batch, correct_specular_batch
from .fields import FieldEvaluator
from .launcher import gather_candidates
from .params import FieldGrid, TraceParams, received_power_dbm

_EDGE_SAMPLES = 9
_TILE_CHUNK = 256


def eligible_edges(scene: Scene, params: TraceParams):
    if params.max_diffractions < 1:
        return []
    return [e for e in scene.edges
            if e.source != "vehicle" or params.vehicle_edges]


@dataclass
class TxContribution:
    coherent: np.ndarray     # complex per receiver
    xpol_power: np.ndarray   # V^2/m^2 per receiver
    path_count: np.ndarray


class Engine:
    """Reusable per-(scene, receiver set) state for tracing transmitters."""

    def __init__(self, scene: Scene, rx_points, trace: TraceParams,
                 scatter: ScatterParams | None = None, seed: int = 0):
        self.scene = scene
        self.trace = trace
        self.rx = np.ascontiguousarray(rx_points, dtype=np.float64)
        self.edges = eligible_edges(scene, trace)
        self.evaluator = FieldEvaluator(scene, edges=self.edges, scatter=scatter)
        self.scatter = scatter if (scatter is not None and scatter.enabled) else None
        self.seed = seed

        if self.edges:
            self.edge_p0 = np.ascontiguousarray([e.p0 for e in self.edges])
            self.edge_p1 = np.ascontiguousarray([e.p1 for e in self.edges])
        else:
            self.edge_p0 = np.empty((0, 3))
            self.edge_p1 = np.empty((0, 3))
        self._edge_samples = self._build_edge_samples()
        self._edge_rx_vis = self._edge_visibility()

        self.tiles = None
        self._tile_rx_vis = None
        if self.scatter is not None:
            self.tiles = WallTiles(scene, self.scatter, seed)
            if len(self.tiles):
                self._tile_rx_vis = self._tile_visibility()

    # -- static precomputation --------------------------------------------

    def _build_edge_samples(self):
        """Interior sample points per edge, offset into the exterior region."""
        if not self.edges:
            return np.empty((0, _EDGE_SAMPLES, 3))
        out = np.empty((len(self.edges), _EDGE_SAMPLES, 3))
        frac = (np.arange(_EDGE_SAMPLES) + 0.5) / _EDGE_SAMPLES
        for i, e in enumerate(self.edges):
            half = e.n_wedge * math.pi / 2.0
            bis = math.cos(half) * e.tangent_a + math.sin(half) * e.normal_a
            pts = e.p0[None, :] + frac[:, None] * (e.p1 - e.p0)[None, :]
            out[i] = pts + 1e-5 * bis[None, :]
        return out

    def _edge_visibility(self):
        """edge x receiver prefilter: any edge sample sees the receiver."""
        if not self.edges or not len(self.rx):
            return np.empty((len(self.edges), len(self.rx)), dtype=bool)
        arr = self.scene.arrays
        ne = len(self.edges)
        pa = self._edge_samples.reshape(-1, 3)
        fa = np.repeat([e.face_a for e in self.edges], _EDGE_SAMPLES).astype(np.int32)
        fb = np.repeat([e.face_b for e in self.edges], _EDGE_SAMPLES).astype(np.int32)
        out = np.zeros((len(pa), len(self.rx)), dtype=np.bool_)
        kernels.visibility_matrix(pa, fa, fb, self.rx, *arr.kernel_args(), out)
        return out.reshape(ne, _EDGE_SAMPLES, -1).any(axis=1)

    def _edge_tx_vis(self, tx_pos):
        if not self.edges:
            return np.empty(0, dtype=bool)
        arr = self.scene.arrays
        pa = self._edge_samples.reshape(-1, 3)
        fa = np.repeat([e.face_a for e in self.edges], _EDGE_SAMPLES).astype(np.int32)
        fb = np.repeat([e.face_b for e in self.edges], _EDGE_SAMPLES).astype(np.int32)
        out = np.zeros((len(pa), 1), dtype=np.bool_)
        kernels.visibility_matrix(pa, fa, fb, tx_pos.reshape(1, 3),
                                  *arr.kernel_args(), out)
        return out.reshape(len(self.edges), _EDGE_SAMPLES).any(axis=1)

    def _tile_visibility(self):
        arr = self.scene.arrays
        starts = self.tiles.centers + 1e-6 * self.tiles.normals
        out = np.zeros((len(self.tiles), len(self.rx)), dtype=np.bool_)
        kernels.visibility_matrix(starts, self.tiles.surf_ids,
                                  np.full(len(self.tiles), -1, np.int32),
                                  self.rx, *arr.kernel_args(), out)
        return out

    # -- per-transmitter solve ----------------------------------------------

    def run_transmitter(self, tx: Transmitter, workers: int = 1,
                        executor=None) -> TxContribution:
        if abs(tx.frequency - self.scene.frequency) > 1e-3:
            raise ValueError(
                f"transmitter {tx.tx_id!r} frequency differs from the scene's")
        k_rx = len(self.rx)
        coherent = np.zeros(k_rx, dtype=complex)
        xpol = np.zeros(k_rx)
        counts = np.zeros(k_rx, dtype=np.int64)
        if k_rx == 0:
            return TxContribution(coherent, xpol, counts)

        rows = gather_candidates(self.scene, tx.position, self.rx, self.trace,
                                 self.edge_p0, self.edge_p1,
                                 workers=workers, executor=executor)
        spec_rows = rows[(rows[:, 0] >= 0) & (rows[:, 8] < 0)] if len(rows) else rows
        prefix_rows = rows[rows[:, 0] < 0] if len(rows) else rows

        diff_rows = self._diffraction_rows(tx, prefix_rows)

        keep, pts, npts, length = correct_specular_batch(
            spec_rows, tx.position, self.rx, self.scene)
        spec_rows = spec_rows[keep]
        fields = self.evaluator.specular_fields(
            spec_rows, pts[keep], length[keep], tx)
        self._accumulate(coherent, counts, spec_rows[:, 0], fields)

        if len(diff_rows):
            keep, pts, npts, s_in, s_out = correct_diffraction_batch(
                diff_rows, tx.position, self.rx, self.scene, self.edges)
            diff_rows = diff_rows[keep]
            fields = self.evaluator.diffraction_fields(
                diff_rows, pts[keep], s_in[keep], s_out[keep], tx)
            self._accumulate(coherent, counts, diff_rows[:, 0], fields)

        if self.tiles is not None and len(self.tiles):
            self._scatter_contribution(tx, coherent, xpol, counts)
        return TxContribution(coherent, xpol, counts)

    def _diffraction_rows(self, tx, prefix_rows):
        """Candidate rows for single-diffraction paths.

        Direct tx->edge->rx hypotheses are enumerated exhaustively over the
        (edge, receiver) pairs passing the sampled-visibility prefilter;
        SBR edge captures supply the reflected prefixes.
        """
        if not self.edges:
            return np.empty((0, kernels.CAND_WIDTH), dtype=np.int32)
        tx_vis = self._edge_tx_vis(tx.position)
        blocks = []
        for ei in np.nonzero(tx_vis)[0]:
            rx_ids = np.nonzero(self._edge_rx_vis[ei])[0]
            if not len(rx_ids):
                continue
            b = np.full((len(rx_ids), kernels.CAND_WIDTH), -1, dtype=np.int32)
            b[:, 0] = rx_ids
            b[:, 1] = 0
            b[:, 8] = ei
            blocks.append(b)
        if len(prefix_rows):
            prefixes = np.unique(prefix_rows, axis=0)
            for p in prefixes:
                ei = p[8]
                rx_ids = np.nonzero(self._edge_rx_vis[ei])[0]
                if not len(rx_ids):
                    continue
                b = np.tile(p, (len(rx_ids), 1)).astype(np.int32)
                b[:, 0] = rx_ids
                blocks.append(b)
        if not blocks:
            return np.empty((0, kernels.CAND_WIDTH), dtype=np.int32)
        return np.unique(np.concatenate(blocks), axis=0)

    @staticmethod
    def _accumulate(coherent, counts, rx_ids, fields):
        if not len(rx_ids):
            return
        np.add.at(coherent, rx_ids, fields)
        np.add.at(counts, rx_ids, 1)

    def _scatter_contribution(self, tx, coherent, xpol, counts):
        p = self.scatter
        tiles = self.tiles
        arr = self.scene.arrays
        k_wave = self.evaluator.k
        f_alpha = lobe_normalization(p.alpha_r)

        to_tile = tiles.centers - tx.position[None, :]
        r_i = np.linalg.norm(to_tile, axis=1)
        r_i = np.maximum(r_i, 1e-9)
        inc = to_tile / r_i[:, None]
        cos_i = -np.einsum("ij,ij->i", inc, tiles.normals)
        facing = cos_i > 1e-9

        vis_tx = np.zeros((1, len(tiles)), dtype=np.bool_)
        kernels.visibility_matrix(tx.position.reshape(1, 3),
                                  np.array([-1], np.int32),
                                  np.array([-1], np.int32),
                                  tiles.centers + 1e-6 * tiles.normals,
                                  *arr.kernel_args(), vis_tx)
        lit = facing & vis_tx[0]
        if not np.any(lit):
            return

        theta = np.arccos(np.clip(inc @ tx.axis, -1.0, 1.0))
        gain = dipole_gain(theta, tx.peak_gain_dbi)
        e_i = np.sqrt(30.0 * tx.input_power * gain) / r_i
        if self.evaluator.has_foliage:
            depth = np.empty(len(tiles))
            kernels.foliage_depth_segments(
                np.broadcast_to(tx.position, (len(tiles), 3)).copy(),
                tiles.centers, self.evaluator.fol_cyl,
                self.evaluator.fol_box_lo, self.evaluator.fol_box_hi, depth)
            e_i = e_i * 10.0 ** (-weissberger_loss(self.scene.frequency / 1e9,
                                                   depth) / 20.0)

        spec = inc - 2.0 * np.einsum("ij,ij->i", inc, tiles.normals)[:, None] \
            * tiles.normals
        lit_idx = np.nonzero(lit)[0]
        for c0 in range(0, len(lit_idx), _TILE_CHUNK):
            sel = lit_idx[c0:c0 + _TILE_CHUNK]
            centers = tiles.centers[sel]
            normals = tiles.normals[sel]
            out_v = self.rx[None, :, :] - centers[:, None, :]   # (T, K, 3)
            r_s = np.linalg.norm(out_v, axis=2)
            r_s = np.maximum(r_s, 1e-9)
            out_d = out_v / r_s[:, :, None]
            front = np.einsum("tkj,tj->tk", out_d, normals) > 1e-12
            ok = front & self._tile_rx_vis[sel]
            if not np.any(ok):
                continue
            cos_psi = np.clip(np.einsum("tkj,tj->tk", out_d, spec[sel]), -1.0, 1.0)
            lobe = ((1.0 + cos_psi) / 2.0) ** p.alpha_r
            es2 = (p.s ** 2 * (e_i[sel] ** 2 * tiles.area * cos_i[sel])[:, None]
                   / (f_alpha * r_s ** 2)) * lobe
            es2 = np.where(ok, es2, 0.0)
            if self.evaluator.has_foliage:
                a = np.repeat(centers, len(self.rx), axis=0)
                b = np.tile(self.rx, (len(sel), 1))
                depth = np.empty(len(a))
                kernels.foliage_depth_segments(
                    a, b, self.evaluator.fol_cyl,
                    self.evaluator.fol_box_lo, self.evaluator.fol_box_hi, depth)
                es2 = es2 * 10.0 ** (-weissberger_loss(
                    self.scene.frequency / 1e9,
                    depth.reshape(len(sel), -1)) / 10.0)
            phase = np.exp(-1j * k_wave * (r_i[sel][:, None] + r_s))
            co_amp = np.sqrt((1.0 - p.k_xpol) * es2)
            coherent += np.sum(co_amp * phase, axis=0)
            xpol += np.sum(p.k_xpol * es2, axis=0)
            counts += np.sum(ok, axis=0)


def simulate_field(scene: Scene, transmitters, rx_points, trace: TraceParams,
                   scatter: ScatterParams | None = None, seed: int = 0,
                   workers: int = 1):
    """Field of every transmitter at every receiver, combined per receiver.

    Returns (e_rms, p_dbm, path_count, discarded) arrays over the receiver
    set.  ``workers`` only partitions the launch sphere; results are
    byte-identical for any worker count.
    """
    engine = Engine(scene, rx_points, trace, scatter, seed)
    executor = None
    if workers > 1:
        executor = ThreadPoolExecutor(max_workers=workers)
    try:
        contribs = [engine.run_transmitter(tx, workers=workers, executor=executor)
                    for tx in transmitters]
    finally:
        if executor is not None:
            executor.shutdown()
    k_rx = len(engine.rx)
    counts = np.zeros(k_rx, dtype=np.int64)
    for c in contribs:
        counts += c.path_count
    if trace.tx_combining == "coherent":
        coh = np.zeros(k_rx, dtype=complex)
        xp = np.zeros(k_rx)
        for c in contribs:
            coh += c.coherent
            xp += c.xpol_power
        e2 = np.abs(coh) ** 2 + xp
    else:
        e2 = np.zeros(k_rx)
        for c in contribs:
            e2 += np.abs(c.coherent) ** 2 + c.xpol_power
    e_rms = np.sqrt(e2)
    wavelength = 299792458.0 / scene.frequency
    p_dbm = received_power_dbm(e_rms, wavelength)
    discarded = p_dbm < trace.rx_threshold_dbm
    return e_rms, np.asarray(p_dbm), counts, discarded


def field_grids_by_height(rx_points, heights, e_rms, p_dbm, counts, discarded,
                          frequency):
    """Split flat receiver results into one FieldGrid per height layer."""
    grids = {}
    for h in heights:
        m = np.abs(rx_points[:, 2] - h) < 1e-9
        grids[h] = FieldGrid(rx_points[m], e_rms[m], p_dbm[m], counts[m],
                             discarded[m], frequency, h)
    return grids
