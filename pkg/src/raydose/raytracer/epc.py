"""Exact path correction: image-theory refinement of launch candidates.

The SBR stage only proposes interaction sequences; this stage rebuilds each
path exactly from mirrored transmitter images (and a Fermat point on the
edge for diffractions), so corrected geometry is independent of the ray
spacing used for discovery.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .. import kernels
from ..antenna import Transmitter
from ..scene import Scene
from .launcher import CandidateSequence
from .params import PropagationPath, C0


def _edge_arrays(edges):
    if edges:
        p0 = np.ascontiguousarray([e.p0 for e in edges], dtype=np.float64)
        p1 = np.ascontiguousarray([e.p1 for e in edges], dtype=np.float64)
        fa = np.ascontiguousarray([e.face_a for e in edges], dtype=np.int32)
        fb = np.ascontiguousarray([e.face_b for e in edges], dtype=np.int32)
    else:
        p0 = np.empty((0, 3)); p1 = np.empty((0, 3))
        fa = np.empty(0, np.int32); fb = np.empty(0, np.int32)
    return p0, p1, fa, fb


def correct_specular_batch(cand, tx_position, rx_points, scene: Scene):
    """Run the image correction kernel over specular candidate rows."""
    arr = scene.arrays
    n = len(cand)
    ok = np.zeros(n, dtype=np.uint8)
    pts = np.zeros((n, kernels.MAX_SEQ + 3, 3))
    npts = np.zeros(n, dtype=np.int32)
    length = np.zeros(n)
    if n:
        kernels.epc_specular_batch(
            np.ascontiguousarray(cand, dtype=np.int32),
            np.ascontiguousarray(tx_position, dtype=np.float64),
            np.ascontiguousarray(rx_points, dtype=np.float64),
            arr.surf_nverts, arr.surf_verts, arr.surf_normal,
            *arr.kernel_args(), ok, pts, npts, length)
    keep = ok.astype(bool)
    return keep, pts, npts, length


def correct_diffraction_batch(cand, tx_position, rx_points, scene: Scene, edges):
    """Run the Fermat/image correction kernel over diffraction rows."""
    arr = scene.arrays
    e_p0, e_p1, e_fa, e_fb = _edge_arrays(edges)
    n = len(cand)
    ok = np.zeros(n, dtype=np.uint8)
    pts = np.zeros((n, kernels.MAX_SEQ + 3, 3))
    npts = np.zeros(n, dtype=np.int32)
    s_in = np.zeros(n)
    s_out = np.zeros(n)
    edge_t = np.zeros(n)
    if n:
        kernels.epc_diffraction_batch(
            np.ascontiguousarray(cand, dtype=np.int32),
            np.ascontiguousarray(tx_position, dtype=np.float64),
            np.ascontiguousarray(rx_points, dtype=np.float64),
            arr.surf_nverts, arr.surf_verts, arr.surf_normal,
            e_p0, e_p1, e_fa, e_fb,
            *arr.kernel_args(), ok, pts, npts, s_in, s_out, edge_t)
    keep = ok.astype(bool)
    return keep, pts, npts, s_in, s_out


def exact_path_correction(sequence: Union[CandidateSequence, tuple],
                          tx, rx_position, scene: Scene,
                          edges=None) -> Optional[PropagationPath]:
    """Exact geometry for one candidate sequence, or None when rejected.

    ``tx`` may be a transmitter (its position is used) or a bare position.
    Rejections: a reflection point leaving its polygon, an occluded leg, a
    degenerate unfold, or a diffraction point pinned at an edge end.  The
    returned path carries zero field; see ``path_field`` for its phasor.
    """
    if isinstance(sequence, tuple):
        sequence = CandidateSequence(tuple(sequence), None)
    tx_pos = tx.position if isinstance(tx, Transmitter) else np.asarray(tx, float)
    rx = np.asarray(rx_position, dtype=float).reshape(1, 3)
    row = np.full((1, kernels.CAND_WIDTH), -1, dtype=np.int32)
    row[0, 0] = 0
    row[0, 1] = len(sequence.reflections)
    for i, s in enumerate(sequence.reflections):
        row[0, 2 + i] = s
    if sequence.edge is None:
        keep, pts, npts, length = correct_specular_batch(row, tx_pos, rx, scene)
        if not keep[0]:
            return None
        n = int(npts[0])
        interactions = (("emit", None),) + tuple(
            ("reflect", int(s)) for s in sequence.reflections)
        return PropagationPath(interactions, pts[0, :n].copy(),
                               float(length[0]), 0j, float(length[0]) / C0)
    if edges is None:
        edges = scene.edges
    row[0, 8] = sequence.edge
    keep, pts, npts, s_in, s_out = correct_diffraction_batch(
        row, tx_pos, rx, scene, edges)
    if not keep[0]:
        return None
    n = int(npts[0])
    total = float(s_in[0] + s_out[0])
    interactions = (("emit", None),) + tuple(
        ("reflect", int(s)) for s in sequence.reflections) + (
        ("diffract", int(sequence.edge)),)
    return PropagationPath(interactions, pts[0, :n].copy(), total, 0j, total / C0)
