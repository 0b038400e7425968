"""Interaction coefficients: Fresnel reflection and heuristic UTD diffraction.

Conventions (fixed for reproducibility):

* time dependence exp(+j w t), propagation exp(-j k r);
* complex relative permittivity eps = eps' - j sigma / (w eps0);
* TE ("soft", E perpendicular to the plane of incidence):
  R = (cos t - sqrt(eps - sin^2 t)) / (cos t + sqrt(eps - sin^2 t)),
  PEC limit -1;
* TM ("hard", E in the plane of incidence, reference flipping through the
  reflection): R = (eps cos t - sqrt(eps - sin^2 t)) /
  (eps cos t + sqrt(eps - sin^2 t)), PEC limit +1.

One-layer dielectric (OLD) walls reflect with the single-slab coefficient
r (1 - exp(-2j b)) / (1 - r^2 exp(-2j b)), b = k0 d sqrt(eps - sin^2 t),
which sums the internal front/back bounces of the layer; no ray is
transmitted through (refraction count is zero).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import modfresnelm

from ..scene import Material, MaterialKind, complex_permittivity

TE = "TE"
TM = "TM"


def fresnel_reflection(eps, theta_i, pol: str):
    """Fresnel reflection coefficient of a half-space.

    ``eps`` is the complex relative permittivity, or the string "PEC" for a
    perfect conductor (TE -> -1, TM -> +1).  ``theta_i`` is the incidence
    angle from the surface normal in [0, pi/2); accepts arrays.
    """
    if pol not in (TE, TM):
        raise ValueError(f"polarization must be TE or TM, got {pol!r}")
    theta_i = np.asarray(theta_i, dtype=float)
    if np.any(theta_i < -1e-12) or np.any(theta_i >= math.pi / 2 + 1e-9):
        raise ValueError("incidence angle must lie in [0, pi/2)")
    if isinstance(eps, str):
        if eps.upper() != "PEC":
            raise ValueError(f"unknown material token {eps!r}")
        r = -1.0 if pol == TE else 1.0
        return complex(r) if theta_i.ndim == 0 else np.full(theta_i.shape, r, complex)
    eps = np.asarray(eps, dtype=complex)
    ct = np.cos(theta_i)
    root = np.sqrt(eps - np.sin(theta_i) ** 2)
    if pol == TE:
        out = (ct - root) / (ct + root)
    else:
        out = (eps * ct - root) / (eps * ct + root)
    return complex(out) if out.ndim == 0 else out


def slab_reflection(eps, theta_i, pol: str, thickness: float, k0: float):
    """Single-slab (one-layer dielectric in air) reflection coefficient."""
    r = fresnel_reflection(eps, theta_i, pol)
    eps = np.asarray(eps, dtype=complex)
    theta_i = np.asarray(theta_i, dtype=float)
    beta = k0 * thickness * np.sqrt(eps - np.sin(theta_i) ** 2)
    ph = np.exp(-2j * beta)
    out = r * (1.0 - ph) / (1.0 - r * r * ph)
    return complex(out) if np.ndim(out) == 0 else out


def surface_reflection(material: Material, frequency: float, theta_i, pol: str):
    """Reflection coefficient for a scene material at ``frequency``."""
    if material.kind is MaterialKind.PEC:
        return fresnel_reflection("PEC", theta_i, pol)
    eps = complex_permittivity(material, frequency)
    if material.kind is MaterialKind.OLD:
        k0 = 2.0 * math.pi * frequency / 299792458.0
        return slab_reflection(eps, theta_i, pol, material.thickness, k0)
    return fresnel_reflection(eps, theta_i, pol)


# ---------------------------------------------------------------------------
# UTD wedge diffraction (Kouyoumjian-Pathak, Luebbers' lossy-wedge variant)
# ---------------------------------------------------------------------------

def transition_function(x):
    """Kouyoumjian transition function F(x) for x >= 0.

    F(x) = 2j sqrt(x) exp(jx) * integral_{sqrt(x)}^inf exp(-j t^2) dt,
    evaluated through the modified negative Fresnel integral.  F -> 1 for
    large arguments and |F| -> 0 like sqrt(pi x) as x -> 0.
    """
    x = np.asarray(x, dtype=float)
    sq = np.sqrt(np.maximum(x, 0.0))
    fm = modfresnelm(sq)[0]
    out = 2j * sq * np.exp(1j * x) * fm
    return out


def _nearest_int(beta, n, sign):
    # integer N minimizing |2 pi n N - (beta + sign*pi)|
    return np.round((beta + sign * math.pi) / (2.0 * math.pi * n))


def _cot_f_term(k, n, beta, L, sign):
    """cot((pi + sign*beta) / 2n) * F(k L a(beta)) with the boundary limit.

    Near a shadow/reflection boundary the cotangent pole and the vanishing
    transition function cancel; the small-argument limit
    n exp(j pi/4) [sqrt(2 pi k L) sgn(eps) - 2 k L eps exp(j pi/4)]
    replaces the product there.
    """
    shape = np.broadcast(np.asarray(beta, float), np.asarray(L, float),
                         np.asarray(n, float)).shape
    beta = np.broadcast_to(np.asarray(beta, float), shape).ravel()
    L = np.broadcast_to(np.asarray(L, float), shape).ravel()
    n = np.broadcast_to(np.asarray(n, float), shape).ravel()
    N = _nearest_int(beta, n, sign)
    eps = beta - sign * (2.0 * math.pi * n * N - math.pi)
    # eps == 0 exactly on the boundary
    small = np.abs(eps) < 1e-5
    out = np.empty(beta.shape, dtype=complex)

    big = ~small
    if np.any(big):
        a = 2.0 * np.cos((2.0 * math.pi * n[big] * N[big] - beta[big]) / 2.0) ** 2
        arg = (math.pi + sign * beta[big]) / (2.0 * n[big])
        out[big] = (np.cos(arg) / np.sin(arg)) * transition_function(k * L[big] * a)
    if np.any(small):
        sgn = np.where(eps[small] >= 0.0, 1.0, -1.0)
        kl = k * L[small]
        out[small] = n[small] * np.exp(1j * math.pi / 4.0) * (
            np.sqrt(2.0 * math.pi * kl) * sgn
            - 2.0 * kl * eps[small] * np.exp(1j * math.pi / 4.0))
    return out.reshape(shape)


def utd_coefficient(k, n, beta0, phi, phi_p, L, r0, rn):
    """Heuristic UTD diffraction coefficient (units sqrt(m)).

    Angles ``phi`` (diffracted) and ``phi_p`` (incident) are measured from
    the o-face through the exterior region; ``beta0`` is the angle between
    the rays and the edge; ``L`` the distance parameter; ``r0``/``rn`` the
    reflection coefficients of the o- and n-face (Luebbers).  All array
    arguments broadcast.
    """
    beta0 = np.asarray(beta0, dtype=float)
    phi = np.asarray(phi, dtype=float)
    phi_p = np.asarray(phi_p, dtype=float)
    pref = -np.exp(-1j * math.pi / 4.0) / (
        2.0 * n * np.sqrt(2.0 * math.pi * k) * np.sin(beta0))
    d1 = _cot_f_term(k, n, phi - phi_p, L, +1)
    d2 = _cot_f_term(k, n, phi - phi_p, L, -1)
    d3 = _cot_f_term(k, n, phi + phi_p, L, -1)
    d4 = _cot_f_term(k, n, phi + phi_p, L, +1)
    return pref * (d1 + d2 + np.asarray(r0) * d3 + np.asarray(rn) * d4)


def luebbers_face_reflection(material: Material, frequency: float,
                             grazing_angle, pol: str):
    """Face reflection coefficient for the heuristic wedge terms.

    Luebbers evaluates the Fresnel coefficient of each face at the grazing
    angle the boundary-defining ray makes with that face (phi' for the
    o-face, n pi - phi for the n-face); outside [0, pi] the angle is folded
    back, which continues the coefficient smoothly into shadow regions.
    """
    g = np.asarray(grazing_angle, dtype=float)
    g = np.abs(np.mod(g, 2.0 * math.pi))
    g = np.where(g > math.pi, 2.0 * math.pi - g, g)
    theta_n = np.clip(np.abs(math.pi / 2.0 - g), 0.0, math.pi / 2.0 - 1e-9)
    if material.kind is MaterialKind.PEC:
        r = -1.0 if pol == TE else 1.0
        return np.full(theta_n.shape, r, dtype=complex) if theta_n.ndim else complex(r)
    return surface_reflection(material, frequency, theta_n, pol)


def keller_cone_error(edge_dir, d_in, d_out) -> float:
    """Angular mismatch between incidence and diffraction cones (radians)."""
    ci = float(np.dot(d_in, edge_dir))
    co = float(np.dot(d_out, edge_dir))
    return abs(math.acos(np.clip(ci, -1, 1)) - math.acos(np.clip(co, -1, 1)))


def edge_angles(edge, d_in, d_out):
    """(beta0, phi, phi_p) of an edge interaction.

    ``d_in`` points from the source toward the edge, ``d_out`` from the edge
    toward the observer; angles follow the o-face parametrization stored on
    the edge.
    """
    e = edge.p1 - edge.p0
    e = e / np.linalg.norm(e)
    beta0 = math.acos(abs(float(np.clip(np.dot(d_in, e), -1, 1))))
    beta0 = max(beta0, 1e-6)

    def exterior_angle(v):
        p = v - np.dot(v, e) * e
        nrm = np.linalg.norm(p)
        if nrm < 1e-12:
            return 0.0
        p = p / nrm
        a = math.atan2(float(np.dot(p, edge.normal_a)),
                       float(np.dot(p, edge.tangent_a)))
        if a < 0.0:
            a += 2.0 * math.pi
        return a

    phi_p = exterior_angle(-d_in)
    phi = exterior_angle(d_out)
    # beta0 measured from the edge axis, not its complement
    beta0 = math.acos(float(np.clip(np.dot(d_in, e), -1, 1)))
    if beta0 < 1e-6:
        beta0 = 1e-6
    if beta0 > math.pi - 1e-6:
        beta0 = math.pi - 1e-6
    return beta0, phi, phi_p


def utd_diffraction(edge, material_a: Material, material_b: Material,
                    d_in, d_out, k: float, s_in: float, s_out: float,
                    pol: str, frequency: float,
                    cone_tol: float = 1e-3) -> complex:
    """Diffraction coefficient for one edge interaction (spherical wave).

    Rejects direction pairs off the Keller cone by more than ``cone_tol``
    radians with ValueError.  The returned coefficient already assumes the
    caustic-corrected spreading sqrt(s_in / (s_out (s_in + s_out))) is
    applied by the caller's amplitude bookkeeping.
    """
    d_in = np.asarray(d_in, float)
    d_out = np.asarray(d_out, float)
    err = keller_cone_error((edge.p1 - edge.p0) / np.linalg.norm(edge.p1 - edge.p0),
                            d_in, d_out)
    if err > cone_tol:
        raise ValueError(f"directions off the Keller cone by {err:.2e} rad")
    beta0, phi, phi_p = edge_angles(edge, d_in, d_out)
    n = edge.n_wedge
    L = s_in * s_out * math.sin(beta0) ** 2 / (s_in + s_out)
    r0 = luebbers_face_reflection(material_a, frequency, phi_p, pol)
    rn = luebbers_face_reflection(material_b, frequency, n * math.pi - phi, pol)
    return complex(utd_coefficient(k, n, beta0, phi, phi_p, L, r0, rn))
