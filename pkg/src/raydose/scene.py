"""Urban scene model: electromagnetic materials, polygonal geometry, foliage.

A scene is loaded once from a structured text file and is immutable
afterwards; every query is read-only, so scenes can be shared freely across
worker threads.

Scene file grammar (line oriented, ``#`` starts a comment)::

    frequency <Hz>

    [materials]
    <name> DHS <conductivity_S_per_m> <rel_permittivity>
    <name> OLD <conductivity_S_per_m> <rel_permittivity> <thickness_m>
    <name> PEC
    <name> BIOPHYSICAL <conductivity_S_per_m> <rel_permittivity>

    [surfaces]
    # triangle or convex quad, vertices CCW as seen from the outward normal
    <name> <material> <tag> x y z  x y z  x y z [x y z] [edges=boundary]

    [boxes]
    # expanded to 6 quads at load time
    <name> <material> <tag> xmin ymin zmin xmax ymax zmax [edges=none|roof|roof+vertical]

    [foliage]
    <name> cylinder cx cy radius zmin zmax [material]
    <name> box xmin ymin zmin xmax ymax zmax [material]

Tags: building_wall, terrain, pavement, vehicle_part, other.  Only
``building_wall`` surfaces take part in diffuse scattering.  Lengths are in
meters and conductivities in S/m.  When a box carries no ``edges=`` option,
building boxes contribute roof and vertical diffraction edges and vehicle
boxes roof edges.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import geometry, kernels

EPS0 = 8.854187817e-12  # F/m

VALID_TAGS = ("building_wall", "terrain", "pavement", "vehicle_part", "other")


class SceneError(Exception):
    pass


class SceneParseError(SceneError):
    pass


class SceneValidationError(SceneError):
    pass


class MaterialKind(enum.Enum):
    DHS = "DHS"            # dielectric half-space
    OLD = "OLD"            # one-layer dielectric slab
    PEC = "PEC"            # perfect electric conductor
    BIOPHYSICAL = "BIOPHYSICAL"


@dataclass(frozen=True)
class Material:
    name: str
    kind: MaterialKind
    conductivity: float = 0.0       # S/m
    rel_permittivity: float = 1.0
    thickness: float = 0.0          # m, OLD only

    def validate(self):
        if self.kind is MaterialKind.PEC:
            return
        if self.conductivity < 0:
            raise SceneValidationError(
                f"material {self.name!r}: conductivity must be >= 0")
        if self.rel_permittivity < 1.0:
            raise SceneValidationError(
                f"material {self.name!r}: rel_permittivity must be >= 1")
        if self.kind is MaterialKind.OLD and not self.thickness > 0:
            raise SceneValidationError(
                f"material {self.name!r}: OLD material needs thickness > 0")


def complex_permittivity(m: Material, f: float) -> complex:
    """Complex relative permittivity eps_r - j*sigma/(2*pi*f*eps0).

    Sign convention: exp(+j w t) time dependence, so losses appear as a
    negative imaginary part.  PEC has no dielectric description and is
    rejected (a dedicated reflection branch handles it).
    """
    if m.kind is MaterialKind.PEC:
        raise ValueError(f"material {m.name!r} is PEC and has no permittivity")
    if not f > 0:
        raise ValueError("frequency must be positive")
    return m.rel_permittivity - 1j * m.conductivity / (2.0 * math.pi * f * EPS0)


@dataclass(frozen=True)
class Surface:
    name: str
    vertices: np.ndarray          # (3|4, 3)
    normal: np.ndarray            # unit
    material: str
    tag: str = "other"
    boundary_edges: bool = False  # expose polygon boundary as half-plane edges

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def area(self) -> float:
        v = self.vertices
        a = 0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0]))
        if len(v) == 4:
            a += 0.5 * np.linalg.norm(np.cross(v[2] - v[0], v[3] - v[0]))
        return float(a)


@dataclass(frozen=True)
class FoliageVolume:
    name: str
    shape: str                    # "cylinder" | "box"
    params: tuple                 # cylinder: (cx, cy, r, z0, z1); box: (lo, hi)
    material: Optional[str] = None


@dataclass(frozen=True)
class Edge:
    """Straight diffraction edge shared by two faces of a wedge."""
    p0: np.ndarray
    p1: np.ndarray
    face_a: int                   # surface index of the o-face
    face_b: int
    tangent_a: np.ndarray         # unit, from the edge into the o-face plane
    normal_a: np.ndarray          # o-face outward normal
    n_wedge: float                # exterior angle / pi (1.5 box corner, 2 screen)
    source: str                   # "building" | "vehicle" | "screen"


@dataclass(frozen=True)
class SolidBox:
    name: str
    lo: np.ndarray
    hi: np.ndarray

    def contains(self, p, strict=True) -> bool:
        if strict:
            return bool(np.all(p > self.lo) and np.all(p < self.hi))
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))


class SceneArrays:
    """Flat numpy view of a scene for the compiled kernels."""

    def __init__(self, surfaces):
        tri_v0, tri_e1, tri_e2, tri_surf = [], [], [], []
        ns = len(surfaces)
        self.surf_nverts = np.zeros(max(ns, 1), dtype=np.int32)
        self.surf_verts = np.zeros((max(ns, 1), 4, 3))
        self.surf_normal = np.zeros((max(ns, 1), 3))
        for si, s in enumerate(surfaces):
            v = s.vertices
            self.surf_nverts[si] = len(v)
            self.surf_verts[si, :len(v)] = v
            if len(v) == 3:
                self.surf_verts[si, 3] = v[2]
            self.surf_normal[si] = s.normal
            tri_v0.append(v[0]); tri_e1.append(v[1] - v[0]); tri_e2.append(v[2] - v[0])
            tri_surf.append(si)
            if len(v) == 4:
                tri_v0.append(v[0]); tri_e1.append(v[2] - v[0]); tri_e2.append(v[3] - v[0])
                tri_surf.append(si)
        self.tri_v0 = np.asarray(tri_v0, dtype=np.float64).reshape(-1, 3)
        self.tri_e1 = np.asarray(tri_e1, dtype=np.float64).reshape(-1, 3)
        self.tri_e2 = np.asarray(tri_e2, dtype=np.float64).reshape(-1, 3)
        self.tri_surf = np.asarray(tri_surf, dtype=np.int32)
        (self.grid_lo, self.grid_hi, self.grid_dims,
         self.grid_start, self.grid_items) = kernels.build_tri_grid(
            self.tri_v0, self.tri_e1, self.tri_e2)

    def kernel_args(self):
        return (self.tri_v0, self.tri_e1, self.tri_e2, self.tri_surf,
                self.grid_lo, self.grid_hi, self.grid_dims,
                self.grid_start, self.grid_items)


@dataclass
class Scene:
    name: str
    frequency: float
    materials: dict[str, Material]
    surfaces: list[Surface]
    foliage: list[FoliageVolume]
    solids: list[SolidBox] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)

    def __post_init__(self):
        self._arrays = None

    @property
    def arrays(self) -> SceneArrays:
        if self._arrays is None:
            self._arrays = SceneArrays(self.surfaces)
        return self._arrays

    def material_of(self, surface: Surface) -> Material:
        return self.materials[surface.material]

    def bounds(self):
        if not self.surfaces:
            return np.zeros(3), np.ones(3)
        allv = np.concatenate([s.vertices for s in self.surfaces])
        return allv.min(axis=0), allv.max(axis=0)

    def point_in_solid(self, p) -> bool:
        return any(b.contains(p) for b in self.solids)


@dataclass(frozen=True)
class RayHit:
    surface_index: int
    surface: Surface
    point: np.ndarray
    distance: float


def ray_intersect(scene: Scene, origin, direction) -> Optional[RayHit]:
    """Nearest surface along the ray, or None.

    Hits closer than 1e-9 m are ignored; exact distance ties resolve to the
    smaller surface index.
    """
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("direction must be unit length")
    o = np.ascontiguousarray(origin, dtype=float)
    arr = scene.arrays
    t, s = kernels.ray_nearest(o, d, 1e-9, -1, -1, -1, *arr.kernel_args())
    if s < 0:
        return None
    return RayHit(int(s), scene.surfaces[s], o + t * d, float(t))


# ---------------------------------------------------------------------------
# scene file loading
# ---------------------------------------------------------------------------

def _box_faces(lo, hi):
    """Six outward-facing quads of an AABB, CCW from outside."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    return {
        "-x": [(x0, y0, z0), (x0, y0, z1), (x0, y1, z1), (x0, y1, z0)],
        "+x": [(x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1)],
        "-y": [(x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1)],
        "+y": [(x0, y1, z0), (x0, y1, z1), (x1, y1, z1), (x1, y1, z0)],
        "-z": [(x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0)],
        "+z": [(x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)],
    }


def _wedge_from_faces(p0, p1, surf_a_idx, surf_b_idx, surfaces, source):
    sa = surfaces[surf_a_idx]
    sb = surfaces[surf_b_idx]
    e = geometry.unit(np.asarray(p1, float) - np.asarray(p0, float))
    mid = 0.5 * (np.asarray(p0, float) + np.asarray(p1, float))

    def face_tangent(s):
        # direction from the edge midpoint into the face, perpendicular to e
        w = s.centroid - mid
        w = w - np.dot(w, e) * e
        return geometry.unit(w)

    t_a = face_tangent(sa)
    t_b = face_tangent(sb)
    n_a = sa.normal.copy()
    # angle of face B measured from face A through the exterior region
    phi_b = math.atan2(float(np.dot(t_b, n_a)), float(np.dot(t_b, t_a)))
    if phi_b <= 1e-9:
        phi_b += 2.0 * math.pi
    n_wedge = phi_b / math.pi
    return Edge(np.asarray(p0, float), np.asarray(p1, float),
                surf_a_idx, surf_b_idx, t_a, n_a, n_wedge, source)


def _screen_edges(surf_idx, surfaces):
    """Boundary edges of an isolated polygon as half-plane (n = 2) wedges."""
    s = surfaces[surf_idx]
    out = []
    v = s.vertices
    for i in range(len(v)):
        p0 = v[i]
        p1 = v[(i + 1) % len(v)]
        e = geometry.unit(p1 - p0)
        mid = 0.5 * (p0 + p1)
        w = s.centroid - mid
        w = w - np.dot(w, e) * e
        t = geometry.unit(w)
        out.append(Edge(p0.copy(), p1.copy(), surf_idx, surf_idx,
                        t, s.normal.copy(), 2.0, "screen"))
    return out


class _Parser:
    def __init__(self, text: str, name: str):
        self.name = name
        self.lines = text.splitlines()
        self.frequency = None
        self.materials: dict[str, Material] = {}
        self.surfaces: list[Surface] = []
        self.solids: list[SolidBox] = []
        self.foliage: list[FoliageVolume] = []
        self.edges: list[Edge] = []
        self._box_edge_requests = []   # (surface name->idx map per box)

    def fail(self, lineno, msg):
        raise SceneParseError(f"{self.name}:{lineno}: {msg}")

    def run(self) -> Scene:
        section = None
        for lineno, raw in enumerate(self.lines, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                if section not in ("materials", "surfaces", "boxes", "foliage"):
                    self.fail(lineno, f"unknown section [{section}]")
                continue
            toks = line.split()
            if section is None:
                if toks[0] == "frequency" and len(toks) == 2:
                    self.frequency = self._num(lineno, toks[1])
                else:
                    self.fail(lineno, f"unexpected line before any section: {line!r}")
            elif section == "materials":
                self._material(lineno, toks)
            elif section == "surfaces":
                self._surface(lineno, toks)
            elif section == "boxes":
                self._box(lineno, toks)
            elif section == "foliage":
                self._foliage(lineno, toks)
        return self._finish()

    def _num(self, lineno, tok):
        try:
            return float(tok)
        except ValueError:
            self.fail(lineno, f"expected a number, got {tok!r}")

    def _material(self, lineno, toks):
        if len(toks) < 2:
            self.fail(lineno, "material needs at least <name> <kind>")
        name, kind_s = toks[0], toks[1].upper()
        try:
            kind = MaterialKind(kind_s)
        except ValueError:
            self.fail(lineno, f"material {name!r}: unknown kind {kind_s!r}")
        if name in self.materials:
            self.fail(lineno, f"duplicate material {name!r}")
        if kind is MaterialKind.PEC:
            if len(toks) != 2:
                self.fail(lineno, f"material {name!r}: PEC takes no parameters")
            m = Material(name, kind)
        elif kind is MaterialKind.OLD:
            if len(toks) != 5:
                self.fail(lineno, f"material {name!r}: OLD needs sigma eps_r thickness")
            m = Material(name, kind, self._num(lineno, toks[2]),
                         self._num(lineno, toks[3]), self._num(lineno, toks[4]))
        else:
            if len(toks) != 4:
                self.fail(lineno, f"material {name!r}: needs sigma eps_r")
            m = Material(name, kind, self._num(lineno, toks[2]),
                         self._num(lineno, toks[3]))
        try:
            m.validate()
        except SceneValidationError as exc:
            self.fail(lineno, str(exc))
        self.materials[name] = m

    def _surface(self, lineno, toks):
        opts = [t for t in toks if "=" in t]
        toks = [t for t in toks if "=" not in t]
        if len(toks) not in (3 + 9, 3 + 12):
            self.fail(lineno, "surface needs <name> <material> <tag> and 3 or 4 vertices")
        name, mat, tag = toks[0], toks[1], toks[2]
        if tag not in VALID_TAGS:
            self.fail(lineno, f"surface {name!r}: unknown tag {tag!r}")
        coords = [self._num(lineno, t) for t in toks[3:]]
        verts = np.array(coords, dtype=float).reshape(-1, 3)
        boundary = False
        for opt in opts:
            key, val = opt.split("=", 1)
            if key == "edges" and val == "boundary":
                boundary = True
            else:
                self.fail(lineno, f"surface {name!r}: unknown option {opt!r}")
        err = geometry.coplanarity_error(verts)
        if err > geometry.COPLANAR_TOL:
            raise SceneValidationError(
                f"surface {name!r}: vertices not coplanar (deviation {err:.2e} m)")
        try:
            normal = geometry.polygon_normal(verts)
        except ValueError:
            raise SceneValidationError(f"surface {name!r}: degenerate polygon")
        if not geometry.is_convex_polygon(verts, normal):
            raise SceneValidationError(f"surface {name!r}: polygon not convex")
        self.surfaces.append(Surface(name, verts, normal, mat, tag, boundary))

    def _box(self, lineno, toks):
        opts = [t for t in toks if "=" in t]
        toks = [t for t in toks if "=" not in t]
        if len(toks) != 9:
            self.fail(lineno, "box needs <name> <material> <tag> and 6 bounds")
        name, mat, tag = toks[0], toks[1], toks[2]
        if tag not in VALID_TAGS:
            self.fail(lineno, f"box {name!r}: unknown tag {tag!r}")
        vals = [self._num(lineno, t) for t in toks[3:]]
        lo = np.array(vals[0:3])
        hi = np.array(vals[3:6])
        if not np.all(hi > lo):
            raise SceneValidationError(f"box {name!r}: max bound must exceed min bound")
        edge_mode = None
        for opt in opts:
            key, val = opt.split("=", 1)
            if key == "edges" and val in ("none", "roof", "roof+vertical"):
                edge_mode = val
            else:
                self.fail(lineno, f"box {name!r}: unknown option {opt!r}")
        if edge_mode is None:
            if tag == "building_wall":
                edge_mode = "roof+vertical"
            elif tag == "vehicle_part":
                edge_mode = "roof"
            else:
                edge_mode = "none"
        base = len(self.surfaces)
        face_idx = {}
        for fk, quad in _box_faces(lo, hi).items():
            verts = np.array(quad, dtype=float)
            # vertical faces of buildings are walls; lids are plain surfaces
            ftag = tag
            if tag == "building_wall" and fk in ("-z", "+z"):
                ftag = "other"
            face_idx[fk] = len(self.surfaces)
            self.surfaces.append(Surface(f"{name}:{fk}", verts,
                                         geometry.polygon_normal(verts), mat, ftag))
        self.solids.append(SolidBox(name, lo, hi))
        source = "vehicle" if tag == "vehicle_part" else "building"
        if edge_mode in ("roof", "roof+vertical"):
            x0, y0, z0 = lo
            x1, y1, z1 = hi
            roof = [
                ((x0, y0, z1), (x1, y0, z1), "-y"),
                ((x1, y0, z1), (x1, y1, z1), "+x"),
                ((x1, y1, z1), (x0, y1, z1), "+y"),
                ((x0, y1, z1), (x0, y0, z1), "-x"),
            ]
            for p0, p1, side in roof:
                self._box_edge_requests.append((p0, p1, face_idx[side],
                                                face_idx["+z"], source))
        if edge_mode == "roof+vertical":
            x0, y0, z0 = lo
            x1, y1, z1 = hi
            vert = [
                ((x0, y0), ("-x", "-y")),
                ((x1, y0), ("+x", "-y")),
                ((x1, y1), ("+x", "+y")),
                ((x0, y1), ("-x", "+y")),
            ]
            for (cx, cy), (fa, fb) in vert:
                self._box_edge_requests.append(((cx, cy, z0), (cx, cy, z1),
                                                face_idx[fa], face_idx[fb], source))

    def _foliage(self, lineno, toks):
        if len(toks) < 2:
            self.fail(lineno, "foliage entry needs <name> <shape> ...")
        name, shape = toks[0], toks[1]
        if shape == "cylinder":
            if len(toks) not in (7, 8):
                self.fail(lineno, f"foliage {name!r}: cylinder needs cx cy r zmin zmax")
            cx, cy, r, z0, z1 = (self._num(lineno, t) for t in toks[2:7])
            if not r > 0:
                raise SceneValidationError(f"foliage {name!r}: radius must be > 0")
            if not z1 > z0:
                raise SceneValidationError(f"foliage {name!r}: zmax must exceed zmin")
            mat = toks[7] if len(toks) == 8 else None
            self.foliage.append(FoliageVolume(name, "cylinder", (cx, cy, r, z0, z1), mat))
        elif shape == "box":
            if len(toks) not in (8, 9):
                self.fail(lineno, f"foliage {name!r}: box needs 6 bounds")
            vals = [self._num(lineno, t) for t in toks[2:8]]
            lo = tuple(vals[0:3])
            hi = tuple(vals[3:6])
            if not all(h > l for l, h in zip(lo, hi)):
                raise SceneValidationError(f"foliage {name!r}: max bound must exceed min bound")
            mat = toks[8] if len(toks) == 9 else None
            self.foliage.append(FoliageVolume(name, "box", (lo, hi), mat))
        else:
            self.fail(lineno, f"foliage {name!r}: unknown shape {shape!r}")

    def _finish(self) -> Scene:
        if self.frequency is None or not self.frequency > 0:
            raise SceneValidationError(f"{self.name}: missing or invalid frequency")
        for s in self.surfaces:
            if s.material not in self.materials:
                raise SceneValidationError(
                    f"surface {s.name!r} references undefined material {s.material!r}")
        for fv in self.foliage:
            if fv.material is not None:
                if fv.material not in self.materials:
                    raise SceneValidationError(
                        f"foliage {fv.name!r} references undefined material {fv.material!r}")
                if self.materials[fv.material].kind is not MaterialKind.BIOPHYSICAL:
                    raise SceneValidationError(
                        f"foliage {fv.name!r}: material {fv.material!r} is not BIOPHYSICAL")
        for p0, p1, fa, fb, source in self._box_edge_requests:
            self.edges.append(_wedge_from_faces(p0, p1, fa, fb, self.surfaces, source))
        for si, s in enumerate(self.surfaces):
            if s.boundary_edges:
                self.edges.extend(_screen_edges(si, self.surfaces))
        return Scene(self.name, self.frequency, self.materials, self.surfaces,
                     self.foliage, self.solids, self.edges)


def parse_scene_text(text: str, name: str = "<scene>") -> Scene:
    return _Parser(text, name).run()


def load_scene(path) -> Scene:
    path = Path(path)
    if not path.exists():
        raise SceneParseError(f"scene file not found: {path}")
    return parse_scene_text(path.read_text(), name=path.name)
