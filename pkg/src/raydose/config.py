"""Run configuration: JSON schema, validation, canonical hashing.

A run config names the scene, the transmitters, the receiver grid, trace
and scattering parameters, the human models and the analysis settings.
Powers are configured in dBm and converted to watts at parse time.  The
canonical hash covers every semantically meaningful field (the output
directory is excluded, as it cannot change results).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .antenna import ReceiverGrid, Transmitter, rsu_transmitter, v2v_transmitter
from .dosimetry import BUILTIN_MODELS, HumanModel
from .raytracer import TraceParams
from .scattering import ScatterParams
from .scene import Scene, load_scene

SCENARIO_NAMES = {1: "scenario1.json", 2: "scenario2.json", 3: "scenario3.json"}


class ConfigError(Exception):
    pass


def _require(d: dict, key: str, ctx: str):
    if key not in d:
        raise ConfigError(f"{ctx}: missing required field {key!r}")
    return d[key]


@dataclass
class RunConfig:
    scene_ref: str
    transmitters: list[Transmitter]
    grid: ReceiverGrid
    trace: TraceParams
    scatter: ScatterParams
    humans: list[HumanModel]
    dlim_factor: float = 0.7
    reference_tx: Optional[str] = None
    roi_override_m: Optional[float] = None
    seed: int = 0
    output_dir: str = "out"
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict)

    def load_scene(self) -> Scene:
        return load_scene(self.scene_path())

    def scene_path(self) -> Path:
        if self.scene_ref.startswith("bundled:"):
            name = self.scene_ref.split(":", 1)[1]
            return Path(str(resources.files("raydose.data") / f"{name}.scene"))
        p = Path(self.scene_ref)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def reference_transmitter(self) -> Transmitter:
        if self.reference_tx is None:
            return self.transmitters[0]
        for tx in self.transmitters:
            if tx.tx_id == self.reference_tx:
                return tx
        raise ConfigError(
            f"analysis.reference_tx {self.reference_tx!r} is not a transmitter id")

    def config_hash(self) -> str:
        """Hash of the normalized config, excluding presentation-only fields.

        Defaults are filled in and the scene is addressed by content, so the
        hash changes exactly when something that can change results changes
        (spelling a default out explicitly or moving the output directory
        does not).
        """
        canon = {
            "scene_sha256": hashlib.sha256(
                self.scene_path().read_bytes()).hexdigest(),
            "transmitters": [
                {"id": t.tx_id, "kind": t.kind,
                 "position": [float(v) for v in t.position],
                 "axis": [float(v) for v in t.axis],
                 "input_power_w": t.input_power,
                 "peak_gain_dbi": t.peak_gain_dbi,
                 "frequency_hz": t.frequency}
                for t in self.transmitters],
            "grid": {"x_range": list(self.grid.x_range),
                     "y_range": list(self.grid.y_range),
                     "spacing": self.grid.spacing,
                     "heights": list(self.grid.heights)},
            "trace": {"ray_spacing_deg": self.trace.ray_spacing_deg,
                      "max_reflections": self.trace.max_reflections,
                      "max_diffractions": self.trace.max_diffractions,
                      "max_transmissions": self.trace.max_transmissions,
                      "rx_threshold_dbm": self.trace.rx_threshold_dbm,
                      "capture_safety": self.trace.capture_safety,
                      "vehicle_edges": self.trace.vehicle_edges,
                      "tx_combining": self.trace.tx_combining},
            "scatter": {"enabled": self.scatter.enabled,
                        "s": self.scatter.s,
                        "k_xpol": self.scatter.k_xpol,
                        "alpha_r": self.scatter.alpha_r,
                        "tile_size": self.scatter.tile_size},
            "humans": [
                {"name": m.name, "height": m.height, "weight": m.weight,
                 "bmi": m.bmi, "head_height": m.head_height,
                 "sar_ref": m.sar_ref, "bmi_ref": m.bmi_ref}
                for m in self.humans],
            "analysis": {"dlim_factor": self.dlim_factor,
                         "reference_tx": self.reference_transmitter.tx_id,
                         "roi_override_m": self.roi_override_m},
            "seed": self.seed,
        }
        blob = json.dumps(canon, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _parse_transmitter(entry: dict, i: int) -> Transmitter:
    ctx = f"transmitters[{i}]"
    if not isinstance(entry, dict):
        raise ConfigError(f"{ctx}: expected an object")
    tx_id = _require(entry, "id", ctx)
    kind = _require(entry, "kind", ctx)
    pos = _require(entry, "position", ctx)
    if not (isinstance(pos, list) and len(pos) == 3):
        raise ConfigError(f"{ctx}: position must be [x, y, z]")
    power = float(entry.get("power_dbm", 33.0))
    gain = float(entry.get("gain_dbi", 0.0))
    try:
        if kind == "V2V":
            return v2v_transmitter(tx_id, pos[0], pos[1], height=pos[2],
                                   power_dbm=power, gain_dbi=gain)
        if kind == "RSU":
            if "facing_deg" not in entry:
                raise ConfigError(
                    f"{ctx}: RSU transmitters must state facing_deg explicitly")
            return rsu_transmitter(tx_id, pos[0], pos[1],
                                   facing_deg=float(entry["facing_deg"]),
                                   height=pos[2],
                                   tilt_deg=float(entry.get("tilt_deg", 10.0)),
                                   power_dbm=power, gain_dbi=gain)
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc
    raise ConfigError(f"{ctx}: kind must be 'V2V' or 'RSU', got {kind!r}")


def _parse_human(entry, i: int) -> HumanModel:
    ctx = f"humans[{i}]"
    if isinstance(entry, str):
        if entry not in BUILTIN_MODELS:
            raise ConfigError(
                f"{ctx}: unknown model {entry!r}; built-ins: "
                f"{sorted(BUILTIN_MODELS)}")
        return BUILTIN_MODELS[entry]
    if not isinstance(entry, dict):
        raise ConfigError(f"{ctx}: expected a model name or an object")
    try:
        if "bmi_ref" not in entry:
            raise ConfigError(
                f"{ctx}: custom models must supply bmi_ref (the reference-body"
                " BMI used with their sar_ref)")
        return HumanModel(
            name=_require(entry, "name", ctx),
            age=float(entry.get("age", 0.0)),
            sex=str(entry.get("sex", "")),
            height=float(_require(entry, "height_m", ctx)),
            weight=float(_require(entry, "weight_kg", ctx)),
            bmi=float(_require(entry, "bmi", ctx)),
            head_height=float(_require(entry, "head_height_m", ctx)),
            sar_ref=float(_require(entry, "sar_ref", ctx)),
            bmi_ref=float(entry["bmi_ref"]),
        )
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc


def parse_config(raw: dict, base_dir: Path) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    scene_ref = _require(raw, "scene", "config")
    tx_entries = _require(raw, "transmitters", "config")
    if not isinstance(tx_entries, list) or not tx_entries:
        raise ConfigError("config: at least one transmitter is required")
    transmitters = [_parse_transmitter(t, i) for i, t in enumerate(tx_entries)]
    ids = [t.tx_id for t in transmitters]
    if len(set(ids)) != len(ids):
        raise ConfigError("config: transmitter ids must be unique")

    g = _require(raw, "grid", "config")
    try:
        grid = ReceiverGrid(
            x_range=tuple(_require(g, "x_range", "grid")),
            y_range=tuple(_require(g, "y_range", "grid")),
            spacing=float(g.get("spacing_m", 3.0)),
            heights=tuple(g.get("heights_m", (1.7, 1.5, 0.85))),
        )
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc

    t = raw.get("trace", {})
    try:
        trace = TraceParams(
            ray_spacing_deg=float(t.get("ray_spacing_deg", 0.2)),
            max_reflections=int(t.get("max_reflections", 6)),
            max_diffractions=int(t.get("max_diffractions", 1)),
            max_transmissions=int(t.get("max_transmissions", 0)),
            rx_threshold_dbm=float(t.get("rx_threshold_dbm", -250.0)),
            vehicle_edges=bool(t.get("vehicle_edges", True)),
            tx_combining=str(t.get("tx_combining", "power")),
        )
    except ValueError as exc:
        raise ConfigError(f"trace: {exc}") from exc

    s = raw.get("scatter", {})
    try:
        scatter = ScatterParams(
            s=float(s.get("s", 0.45)),
            k_xpol=float(s.get("k_xpol", 0.4)),
            alpha_r=int(s.get("alpha_r", 4)),
            tile_size=float(s.get("tile_size_m", 2.0)),
            enabled=bool(s.get("enabled", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"scatter: {exc}") from exc

    humans = [_parse_human(h, i) for i, h in enumerate(raw.get("humans", []))]
    for m in humans:
        if not any(abs(m.head_height - h) < 1e-9 for h in grid.heights):
            raise ConfigError(
                f"humans: model {m.name!r} needs a grid height at its head "
                f"height {m.head_height} m; grid heights are {list(grid.heights)}")

    a = raw.get("analysis", {})
    roi_override = a.get("roi_override_m")
    cfg = RunConfig(
        scene_ref=scene_ref,
        transmitters=transmitters,
        grid=grid,
        trace=trace,
        scatter=scatter,
        humans=humans,
        dlim_factor=float(a.get("dlim_factor", 0.7)),
        reference_tx=a.get("reference_tx"),
        roi_override_m=None if roi_override is None else float(roi_override),
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir", "out")),
        base_dir=base_dir,
        raw=raw,
    )
    cfg.reference_transmitter  # validates the id
    if not cfg.scene_path().exists():
        raise ConfigError(f"scene: file not found: {cfg.scene_path()}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw, base_dir=path.parent)


def load_scenario(n: int) -> RunConfig:
    """One of the committed scenario configs (1: one car; 2: car + RSU;
    3: five cars + RSU)."""
    if n not in SCENARIO_NAMES:
        raise ConfigError(f"scenario must be 1, 2 or 3, got {n}")
    path = resources.files("raydose.data") / SCENARIO_NAMES[n]
    raw = json.loads(path.read_text())
    return parse_config(raw, base_dir=Path(str(path)).parent)
