"""End-to-end commands: simulate -> dose -> dlim -> report.

Every command is a pure function of its config and input files; outputs are
written with fixed ordering and shortest-roundtrip float formatting, so
re-running a command reproduces its artifacts byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import build_roi, compute_dlim, distance_profile, summarize
from .antenna import generate_grid
from .config import RunConfig
from .dosimetry import ExposureLimit, check_compliance, wbsar_grid
from .raytracer import FieldGrid, field_grids_by_height, simulate_field

SAR_HEADER = "x,y,z,wbsar_W_per_kg"


class PipelineError(Exception):
    pass


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _field_filename(height: float) -> str:
    return f"field_z{height:.2f}.csv"


def cmd_simulate(config: RunConfig, out_dir=None, workers: int = 1) -> dict:
    """Trace all transmitters and write one field-grid CSV per height."""
    out = Path(out_dir) if out_dir else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = config.load_scene()
    rx, removed = generate_grid(config.grid, scene)
    if len(rx) == 0:
        raise PipelineError("receiver grid is empty")
    e, p, counts, disc = simulate_field(
        scene, config.transmitters, rx, config.trace, config.scatter,
        seed=config.seed, workers=workers)
    grids = field_grids_by_height(rx, config.grid.heights, e, p, counts, disc,
                                  scene.frequency)
    files = {}
    for h in config.grid.heights:
        name = _field_filename(h)
        grids[h].to_csv(out / name)
        files[f"{h:.2f}"] = name
    manifest = {
        "engine_version": __version__,
        "config_hash": config.config_hash(),
        "scene": scene.name,
        "scene_sha256": hashlib.sha256(
            config.scene_path().read_bytes()).hexdigest(),
        "frequency_hz": scene.frequency,
        "transmitters": len(config.transmitters),
        "transmitter_ids": [t.tx_id for t in config.transmitters],
        "vehicle_tx_positions": [[float(v) for v in t.position]
                                 for t in config.transmitters if t.kind == "V2V"],
        "grid_heights": [float(h) for h in config.grid.heights],
        "field_files": files,
        "receivers": int(len(rx)),
        "receivers_removed_inside_geometry": int(len(removed)),
        "rx_threshold_dbm": config.trace.rx_threshold_dbm,
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def _load_field(out: Path, height: float, threshold_dbm: float) -> FieldGrid:
    path = out / _field_filename(height)
    if not path.exists():
        raise PipelineError(f"missing field file {path}; run simulate first")
    return FieldGrid.from_csv(path, threshold_dbm=threshold_dbm)


def _write_sar_csv(path: Path, points, sar):
    lines = [SAR_HEADER]
    for i in range(len(points)):
        x, y, z = (float(v) for v in points[i])
        lines.append(f"{x!r},{y!r},{z!r},{float(sar[i])!r}")
    path.write_text("\n".join(lines) + "\n")


def _read_sar_csv(path: Path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != SAR_HEADER:
            raise PipelineError(f"{path}: unexpected SAR CSV header {header!r}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    pts = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows])
    sar = np.array([float(r[3]) for r in rows])
    return pts, sar


def cmd_dose(config: RunConfig, out_dir=None,
             limit: ExposureLimit = ExposureLimit()) -> dict:
    """Convert field grids to per-model SAR grids with summary statistics."""
    out = Path(out_dir) if out_dir else Path(config.output_dir)
    if not (out / "manifest.json").exists():
        raise PipelineError(f"missing {out / 'manifest.json'}; run simulate first")
    report = {}
    for model in config.humans:
        try:
            grid = _load_field(out, model.head_height,
                               config.trace.rx_threshold_dbm)
        except PipelineError as exc:
            raise PipelineError(
                f"model {model.name!r}: no field at head height "
                f"{model.head_height} m ({exc})") from exc
        sar = wbsar_grid(grid, model)
        sar_file = f"sar_{model.name}.csv"
        _write_sar_csv(out / sar_file, grid.points, sar)
        stats = summarize(sar)
        verdict = check_compliance(sar, limit)
        report[model.name] = {
            "sar_file": sar_file,
            "head_height_m": model.head_height,
            "stats": stats.as_dict(),
            "compliance": {
                "max_W_per_kg": verdict["max"],
                "limit_W_per_kg": limit.wb_limit,
                "margin_dB": verdict["margin_dB"],
                "pass": verdict["pass"],
            },
        }
    _write_json(out / "exposure.json", report)
    return report


def cmd_dlim(config: RunConfig, out_dir=None) -> dict:
    """Influence distance per model, the shared d_lim, and the ROI."""
    out = Path(out_dir) if out_dir else Path(config.output_dir)
    ref = config.reference_transmitter
    origin = ref.position
    per_model = {}
    for model in config.humans:
        sar_path = out / f"sar_{model.name}.csv"
        if not sar_path.exists():
            raise PipelineError(f"missing {sar_path}; run dose first")
        pts, sar = _read_sar_csv(sar_path)
        d = np.hypot(pts[:, 0] - origin[0], pts[:, 1] - origin[1])
        keep = ~np.isnan(sar)
        d_lim = compute_dlim(d[keep], sar[keep], factor=config.dlim_factor)
        per_model[model.name] = d_lim
        profile = distance_profile(pts, sar, origin,
                                   bin_width=config.grid.spacing)
        lines = ["distance_m,wbsar_W_per_kg"]
        for _, dist_arr, val_arr in profile:
            order = np.lexsort((val_arr, dist_arr))
            for i in order:
                lines.append(f"{float(dist_arr[i])!r},{float(val_arr[i])!r}")
        (out / f"profile_{model.name}.csv").write_text("\n".join(lines) + "\n")

    # one shared d_lim for comparability: the max across models, unless
    # overridden in the config
    if config.roi_override_m is not None:
        chosen = float(config.roi_override_m)
        rule = "override"
    else:
        chosen = max(per_model.values())
        rule = "max_over_models"
    vehicle_tx = [t for t in config.transmitters if t.kind == "V2V"]
    roi_sources = vehicle_tx if vehicle_tx else config.transmitters
    roi = build_roi([t.position for t in roi_sources], chosen)
    result = {
        "reference_tx": ref.tx_id,
        "factor": config.dlim_factor,
        "d_lim_per_model_m": per_model,
        "d_lim_m": chosen,
        "d_lim_rule": rule,
        "roi": roi.as_dict(),
    }
    _write_json(out / "dlim.json", result)
    return result


def cmd_report(run_dirs, out_path, limit: ExposureLimit = ExposureLimit()) -> dict:
    """Combined report over one or more completed runs.

    The shared region of interest uses the influence distance from the first
    run that has a dlim.json (the reference exposure scenario) and covers
    the vehicle transmitter positions of every run, so the same square is
    compared across scenarios of increasing transmitter count.
    """
    run_dirs = [Path(d) for d in run_dirs]
    missing = [str(d) for d in run_dirs if not (d / "manifest.json").exists()]
    if missing:
        raise PipelineError("missing run inputs (run simulate/dose first): "
                            + ", ".join(missing))
    d_lim = None
    roi_source = None
    for d in run_dirs:
        if (d / "dlim.json").exists():
            dl = json.loads((d / "dlim.json").read_text())
            d_lim = dl["d_lim_m"]
            roi_source = d.name
            break
    if d_lim is None:
        raise PipelineError("no dlim.json found in any run directory; "
                            "run dlim on the reference scenario first")
    positions = []
    for d in run_dirs:
        manifest = json.loads((d / "manifest.json").read_text())
        for p in manifest.get("vehicle_tx_positions", []):
            if not any(abs(p[0] - q[0]) < 1e-9 and abs(p[1] - q[1]) < 1e-9
                       for q in positions):
                positions.append(p)
    if not positions:
        raise PipelineError("no vehicle transmitters recorded in the manifests")
    roi = build_roi(positions, d_lim)
    runs = {}
    for d in run_dirs:
        models = {}
        for sar_path in sorted(d.glob("sar_*.csv")):
            name = sar_path.stem[len("sar_"):]
            pts, sar = _read_sar_csv(sar_path)
            inside = np.array([roi.contains(p) for p in pts])
            samples = sar[inside]
            samples = samples[~np.isnan(samples)]
            if samples.size < 3:
                raise PipelineError(
                    f"{sar_path}: fewer than 3 ROI samples; ROI {roi.as_dict()}")
            stats = summarize(samples)
            verdict = check_compliance(samples, limit)
            models[name] = {
                "stats": stats.as_dict(),
                "compliance": {
                    "max_W_per_kg": verdict["max"],
                    "limit_W_per_kg": limit.wb_limit,
                    "margin_dB": verdict["margin_dB"],
                    "pass": verdict["pass"],
                },
            }
        manifest = json.loads((d / "manifest.json").read_text())
        runs[d.name] = {
            "transmitters": manifest["transmitters"],
            "config_hash": manifest["config_hash"],
            "models": models,
        }
    report = {
        "engine_version": __version__,
        "roi_source": roi_source,
        "roi": roi.as_dict(),
        "d_lim_m": roi.d_lim,
        "runs": runs,
    }
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out_path, report)
    return report
