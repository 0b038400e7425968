import hashlib
import math

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from raydose.scene import (EPS0, Material, MaterialKind, SceneParseError,
                           SceneValidationError, complex_permittivity,
                           load_scene, parse_scene_text, ray_intersect)
from oracles import brute_force_intersect

WET_EARTH = Material("wet_earth", MaterialKind.DHS, 1.215, 15.76)
ASPHALT = Material("asphalt", MaterialKind.DHS, 0.0, 5.72)
CONCRETE = Material("concrete", MaterialKind.OLD, 0.12, 5.31, 0.3)
PEC = Material("metal", MaterialKind.PEC)


def test_permittivity_lossless_asphalt():
    eps = complex_permittivity(ASPHALT, 5.9e9)
    assert eps == pytest.approx(5.72 + 0j)
    assert eps.imag == 0.0


def test_permittivity_wet_earth():
    # sigma/(2 pi f eps0) evaluated by hand: 1.215 / (2*pi*5.9e9*EPS0)
    eps = complex_permittivity(WET_EARTH, 5.9e9)
    assert eps.real == pytest.approx(15.76)
    assert -eps.imag == pytest.approx(1.215 / (2 * math.pi * 5.9e9 * EPS0))
    assert -eps.imag == pytest.approx(3.702, abs=5e-4)


def test_permittivity_concrete():
    eps = complex_permittivity(CONCRETE, 5.9e9)
    assert -eps.imag == pytest.approx(0.3657, abs=5e-4)


def test_permittivity_rejects_pec():
    with pytest.raises(ValueError):
        complex_permittivity(PEC, 5.9e9)


@given(sigma=st.floats(0.0, 10.0), eps_r=st.floats(1.0, 80.0),
       f=st.floats(1e8, 1e11))
def test_zero_conductivity_is_lossless(sigma, eps_r, f):
    m = Material("m", MaterialKind.DHS, 0.0, eps_r)
    assert complex_permittivity(m, f).imag == 0.0
    m2 = Material("m", MaterialKind.DHS, sigma, eps_r)
    assert complex_permittivity(m2, f).imag <= 0.0


def test_empty_scene_is_valid():
    sc = parse_scene_text("frequency 5.9e9\n[materials]\nmetal PEC\n")
    assert sc.frequency == 5.9e9
    assert sc.surfaces == []


def test_undefined_material_named_in_error():
    text = """
frequency 5.9e9
[materials]
metal PEC
[surfaces]
s chrome other 0 0 0  1 0 0  1 1 0
"""
    with pytest.raises(SceneValidationError, match="chrome"):
        parse_scene_text(text)


def test_non_coplanar_quad_rejected():
    text = """
frequency 5.9e9
[materials]
metal PEC
[surfaces]
bent metal other 0 0 0  1 0 0  1 1 0.5  0 1 0
"""
    with pytest.raises(SceneValidationError, match="bent"):
        parse_scene_text(text)


def test_degenerate_polygon_rejected():
    text = """
frequency 5.9e9
[materials]
metal PEC
[surfaces]
sliver metal other 0 0 0  1 0 0  2 0 0
"""
    with pytest.raises(SceneValidationError, match="sliver"):
        parse_scene_text(text)


def test_material_invariants_enforced():
    with pytest.raises(SceneParseError, match="conductivity"):
        parse_scene_text("frequency 1e9\n[materials]\nbad DHS -1 5\n")
    with pytest.raises(SceneParseError, match="rel_permittivity"):
        parse_scene_text("frequency 1e9\n[materials]\nbad DHS 0 0.5\n")
    with pytest.raises(SceneParseError, match="PEC takes no parameters"):
        parse_scene_text("frequency 1e9\n[materials]\nbad PEC 1 2\n")


def test_parse_error_reports_line():
    with pytest.raises(SceneParseError, match=":3:"):
        parse_scene_text("frequency 5.9e9\n[materials]\nmetal NOPE 1 2\n", "f")


def test_old_needs_thickness():
    with pytest.raises(SceneParseError):
        parse_scene_text("frequency 1e9\n[materials]\nwall OLD 0.1 5\n")


def test_bundled_scene_contents(bundled_scene):
    sc = bundled_scene
    assert sc.frequency == 5.9e9
    # terrain + pavement ground plus 4 buildings and 5 vehicles as boxes
    ground = [s for s in sc.surfaces if s.tag in ("terrain", "pavement")]
    assert len(ground) == 9
    names = {b.name for b in sc.solids}
    assert names == {"bldg_nw", "bldg_ne", "bldg_sw", "bldg_se",
                     "car_blue", "car_2", "car_3", "car_4", "car_5"}
    assert len([f for f in sc.foliage]) == 2
    heights = {b.name: b.hi[2] for b in sc.solids}
    assert heights["bldg_nw"] == 80.0
    # buildings give roof+vertical edges, vehicles roof-only
    assert len(sc.edges) == 4 * 8 + 5 * 4


BUNDLED_SHA256 = "85010a9167d9497f81d7af23ec806e5539ccb1fcc79e93d2461f39bb270e8ff7"


def test_bundled_scene_checksum(bundled_scene_path):
    digest = hashlib.sha256(bundled_scene_path.read_bytes()).hexdigest()
    assert digest == BUNDLED_SHA256


def test_scene_load_idempotent(bundled_scene_path):
    a = load_scene(bundled_scene_path)
    b = load_scene(bundled_scene_path)
    assert len(a.surfaces) == len(b.surfaces)
    for sa, sb in zip(a.surfaces, b.surfaces):
        assert sa.name == sb.name and sa.material == sb.material
        assert np.array_equal(sa.vertices, sb.vertices)
    assert [e.n_wedge for e in a.edges] == [e.n_wedge for e in b.edges]


def test_ray_intersect_axis_aligned(ground_scene):
    hit = ray_intersect(ground_scene, [0, 0, 1.0], [0, 0, -1.0])
    assert hit is not None
    assert hit.distance == pytest.approx(1.0)
    assert np.allclose(hit.point, [0, 0, 0])


def test_ray_parallel_to_wall_misses(canyon_scene):
    # direction lies in the plane of wall_a (y = 0)
    hit = ray_intersect(canyon_scene, [0, -1.0, 5.0], [1.0, 0.0, 0.0])
    assert hit is None


def _random_triangle_scene(n=100, seed=7):
    rng = np.random.default_rng(seed)
    lines = ["frequency 5.9e9", "[materials]", "metal PEC", "[surfaces]"]
    for i in range(n):
        base = rng.uniform(-20, 20, 3)
        v1 = base + rng.uniform(-12, 12, 3)
        v2 = base + rng.uniform(-12, 12, 3)
        area2 = np.linalg.norm(np.cross(v1 - base, v2 - base))
        if area2 < 1e-3:
            v2 = base + np.array([1.0, 2.0, 0.5])
        coords = " ".join(f"{c:.6f}" for p in (base, v1, v2) for c in p)
        lines.append(f"t{i} metal other {coords}")
    scene = parse_scene_text("\n".join(lines))
    # the oracle scans exactly the parsed geometry
    tris = [(s.vertices[0], s.vertices[1], s.vertices[2], i)
            for i, s in enumerate(scene.surfaces)]
    return scene, tris


def test_ray_intersect_matches_brute_force():
    scene, tris = _random_triangle_scene()
    rng = np.random.default_rng(11)
    n_hits = 0
    n_grazing = 0
    for _ in range(1000):
        o = rng.uniform(-25, 25, 3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        expect = brute_force_intersect(o, d, tris)
        got = ray_intersect(scene, o, d)
        if expect is None:
            assert got is None
            continue
        n_hits += 1
        assert got is not None
        if expect[2] < 1e-6:
            # the nearest hit grazes a triangle boundary: the two scans may
            # round the inclusion differently, so only sanity-check it
            n_grazing += 1
            assert got.distance >= expect[0] - 1e-9
            continue
        assert got.surface_index == expect[1]
        assert got.distance == pytest.approx(expect[0], rel=1e-9)
    assert n_hits > 200       # the scene is dense enough to exercise the grid
    assert n_grazing < 0.05 * n_hits
