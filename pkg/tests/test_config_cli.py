import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from raydose.config import ConfigError, load_config, load_scenario
from raydose.pipeline import cmd_dlim, cmd_dose, cmd_report, cmd_simulate

TINY_SCENE = """
frequency 5.9e9
[materials]
metal PEC
asphalt DHS 0 5.72
[surfaces]
ground asphalt pavement  -10 -10 0  30 -10 0  30 30 0  -10 30 0
[boxes]
hut metal other 10 10 0 14 14 5 edges=none
"""


def tiny_config(tmp_path, **overrides):
    scene_path = tmp_path / "tiny.scene"
    scene_path.write_text(TINY_SCENE)
    raw = {
        "scene": "tiny.scene",
        "transmitters": [
            {"id": "car", "kind": "V2V", "position": [1.5, 1.5, 1.7],
             "power_dbm": 33.0}
        ],
        "grid": {"x_range": [0.0, 21.0], "y_range": [0.0, 21.0],
                 "spacing_m": 3.0, "heights_m": [1.7, 1.5, 0.85]},
        "trace": {"ray_spacing_deg": 2.0, "max_reflections": 3},
        "scatter": {"enabled": False},
        "humans": ["duke", "ella", "nina"],
        "analysis": {"dlim_factor": 0.7},
        "seed": 3,
        "output_dir": str(tmp_path / "out"),
    }
    raw.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path, raw


def test_scenario_configs_load():
    for n in (1, 2, 3):
        cfg = load_scenario(n)
        assert len(cfg.transmitters) == {1: 1, 2: 2, 3: 6}[n]
        assert cfg.trace.ray_spacing_deg == 0.5
        assert cfg.scatter.s == 0.45 and cfg.scatter.k_xpol == 0.4
        assert cfg.scatter.alpha_r == 4
        assert [m.name for m in cfg.humans] == ["duke", "ella", "nina"]
        scene = cfg.load_scene()
        assert scene.frequency == 5.9e9


def test_zero_transmitters_rejected(tmp_path):
    path, raw = tiny_config(tmp_path)
    raw["transmitters"] = []
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError, match="transmitter"):
        load_config(path)


def test_rsu_requires_facing(tmp_path):
    path, raw = tiny_config(tmp_path)
    raw["transmitters"].append({"id": "r", "kind": "RSU",
                                "position": [0, 0, 5.0]})
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError, match="facing"):
        load_config(path)


def test_head_height_must_be_gridded(tmp_path):
    path, raw = tiny_config(tmp_path)
    raw["grid"]["heights_m"] = [1.7, 1.5]
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError, match="nina"):
        load_config(path)


def test_custom_human_requires_bmi_ref(tmp_path):
    path, raw = tiny_config(tmp_path)
    raw["humans"] = [{"name": "x", "height_m": 1.8, "weight_kg": 80,
                      "bmi": 24.7, "head_height_m": 1.7, "sar_ref": 3e-5}]
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError, match="bmi_ref"):
        load_config(path)


def test_config_hash_semantics(tmp_path):
    path, raw = tiny_config(tmp_path)
    base = load_config(path).config_hash()
    # output location is presentation-only
    raw2 = dict(raw, output_dir=str(tmp_path / "elsewhere"))
    path.write_text(json.dumps(raw2))
    assert load_config(path).config_hash() == base
    # spelling a default out explicitly is not a semantic change
    raw2b = json.loads(json.dumps(raw))
    raw2b["trace"]["rx_threshold_dbm"] = -250.0
    raw2b["transmitters"][0]["gain_dbi"] = 0.0
    path.write_text(json.dumps(raw2b))
    assert load_config(path).config_hash() == base
    # physics fields are
    raw3 = json.loads(json.dumps(raw))
    raw3["transmitters"][0]["power_dbm"] = 30.0
    path.write_text(json.dumps(raw3))
    assert load_config(path).config_hash() != base
    # and so is the scene content
    raw4 = json.loads(json.dumps(raw))
    scene_path = tmp_path / "tiny.scene"
    scene_path.write_text(scene_path.read_text().replace("0 5.72", "0 6.0"))
    path.write_text(json.dumps(raw4))
    assert load_config(path).config_hash() != base


def test_pipeline_end_to_end_deterministic(tmp_path):
    path, raw = tiny_config(tmp_path)
    cfg = load_config(path)
    out = tmp_path / "out"
    m1 = cmd_simulate(cfg, out_dir=out, workers=1)
    assert m1["transmitters"] == 1
    files = sorted((out).glob("field_z*.csv"))
    assert len(files) == 3
    blobs = {f.name: f.read_bytes() for f in files}
    cmd_dose(cfg, out_dir=out)
    dl = cmd_dlim(cfg, out_dir=out)
    assert 0 < dl["d_lim_m"] <= 30.0
    rep1 = cmd_report([out], tmp_path / "report.json")
    rep_blob = (tmp_path / "report.json").read_bytes()

    # re-running every stage reproduces the artifacts byte for byte
    stage_files = sorted(str(f.name) for f in out.iterdir())
    blobs.update({f.name: f.read_bytes() for f in out.iterdir()})
    m2 = cmd_simulate(cfg, out_dir=out, workers=4)
    assert m2 == m1
    cmd_dose(cfg, out_dir=out)
    cmd_dlim(cfg, out_dir=out)
    cmd_report([out], tmp_path / "report.json")
    assert sorted(str(f.name) for f in out.iterdir()) == stage_files
    for f in out.iterdir():
        assert f.read_bytes() == blobs[f.name], f.name
    assert (tmp_path / "report.json").read_bytes() == rep_blob
    assert set(rep1["runs"]["out"]["models"]) == {"duke", "ella", "nina"}


def test_dose_uniform_field_recovers_sar_ref(tmp_path):
    path, raw = tiny_config(tmp_path)
    cfg = load_config(path)
    out = tmp_path / "out"
    out.mkdir()
    # synthesize uniform 2.45 V/m field files at each height
    from raydose.raytracer import FieldGrid, received_power_dbm
    lam = 299792458.0 / 5.9e9
    for h in (1.7, 1.5, 0.85):
        pts = np.array([[x, y, h] for y in (0.0, 3.0) for x in (0.0, 3.0)])
        e = np.full(4, 2.45)
        fg = FieldGrid(pts, e, np.asarray(received_power_dbm(e, lam)),
                       np.ones(4, int), np.zeros(4, bool), 5.9e9, h)
        fg.to_csv(out / f"field_z{h:.2f}.csv")
    (out / "manifest.json").write_text(json.dumps({"config_hash": "x"}))
    rep = cmd_dose(cfg, out_dir=out)
    assert rep["duke"]["stats"]["maximum"] == pytest.approx(3.6e-5)
    assert rep["ella"]["stats"]["maximum"] == pytest.approx(4.0e-5)
    assert rep["nina"]["stats"]["maximum"] == pytest.approx(6.0e-6)
    assert all(rep[m]["compliance"]["pass"] for m in rep)


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "raydose.cli", *args],
                          capture_output=True, text=True)


def test_cli_validate_bundled_scenarios():
    for n in ("1", "2", "3"):
        res = _cli("validate", "--scenario", n)
        assert res.returncode == 0, res.stderr
        assert "ok" in res.stdout


def test_cli_validation_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    res = _cli("validate", "--config", str(bad))
    assert res.returncode == 2
    assert "error" in res.stderr


def test_cli_missing_inputs_is_runtime_error(tmp_path):
    path, _ = tiny_config(tmp_path)
    res = _cli("dose", "--config", str(path))
    assert res.returncode == 1


def test_cli_full_run(tmp_path):
    path, _ = tiny_config(tmp_path)
    out = str(tmp_path / "cli_out")
    res = _cli("simulate", "--config", str(path), "--out", out, "--threads", "2")
    assert res.returncode == 0, res.stderr
    res = _cli("dose", "--config", str(path), "--out", out)
    assert res.returncode == 0, res.stderr
    assert "pass" in res.stdout
    res = _cli("dlim", "--config", str(path), "--out", out)
    assert res.returncode == 0, res.stderr
    res = _cli("report", "--out", out)
    assert res.returncode == 0, res.stderr
    report = json.loads((Path(out) / "report.json").read_text())
    assert set(report["runs"]) == {"cli_out"}
