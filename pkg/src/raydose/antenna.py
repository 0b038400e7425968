"""Transmitters (half-wave dipole pattern) and the isotropic receiver grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np

from . import geometry
from .scene import Scene

DEFAULT_FREQUENCY = 5.9e9
DEFAULT_POWER_DBM = 33.0
V2V_HEIGHT = 1.7          # m above ground
RSU_HEIGHT = 5.0
RSU_TILT_DEG = 10.0
DEFAULT_HEIGHTS = (1.7, 1.5, 0.85)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def watts_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w * 1000.0)


@dataclass(frozen=True)
class Transmitter:
    """A dipole source; V2V units sit on vehicle roofs, RSUs on facades.

    The angular pattern is the half-wave dipole shape with its peak
    normalized to ``peak_gain_dbi`` (0 dBi by default, i.e. the physical
    2.15 dBi peak is rescaled).
    """
    tx_id: str
    position: np.ndarray
    kind: str = "V2V"                    # "V2V" | "RSU"
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    input_power: float = dbm_to_watts(DEFAULT_POWER_DBM)   # W
    peak_gain_dbi: float = 0.0
    frequency: float = DEFAULT_FREQUENCY

    def __post_init__(self):
        if not self.input_power > 0:
            raise ValueError(f"transmitter {self.tx_id!r}: input power must be > 0")
        if self.kind not in ("V2V", "RSU"):
            raise ValueError(f"transmitter {self.tx_id!r}: kind must be V2V or RSU")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "axis", geometry.unit(self.axis))

    @property
    def wavelength(self) -> float:
        return 299792458.0 / self.frequency

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    def gain(self, direction) -> float:
        """Linear gain toward a unit direction."""
        c = float(np.clip(np.dot(np.asarray(direction, float), self.axis), -1.0, 1.0))
        return dipole_gain(math.acos(c), self.peak_gain_dbi)


def v2v_transmitter(tx_id, x, y, height=V2V_HEIGHT,
                    power_dbm=DEFAULT_POWER_DBM, gain_dbi=0.0,
                    frequency=DEFAULT_FREQUENCY) -> Transmitter:
    return Transmitter(tx_id, np.array([x, y, height]), "V2V",
                       input_power=dbm_to_watts(power_dbm),
                       peak_gain_dbi=gain_dbi, frequency=frequency)


def rsu_transmitter(tx_id, x, y, facing_deg, height=RSU_HEIGHT,
                    tilt_deg=RSU_TILT_DEG, power_dbm=DEFAULT_POWER_DBM,
                    gain_dbi=0.0, frequency=DEFAULT_FREQUENCY) -> Transmitter:
    """Roadside unit: dipole axis tilted from vertical toward ``facing_deg``.

    Tilting the axis by the downtilt angle in the vertical plane of the
    facing azimuth puts the pattern's broadside maximum that many degrees
    below the horizon on the facing side.
    """
    tilt = math.radians(tilt_deg)
    az = math.radians(facing_deg)
    facing = np.array([math.cos(az), math.sin(az), 0.0])
    axis = math.cos(tilt) * np.array([0.0, 0.0, 1.0]) + math.sin(tilt) * facing
    return Transmitter(tx_id, np.array([x, y, height]), "RSU", axis=axis,
                       input_power=dbm_to_watts(power_dbm),
                       peak_gain_dbi=gain_dbi, frequency=frequency)


def dipole_gain(theta, peak_gain_dbi: float = 0.0):
    """Half-wave dipole power gain at angle theta from the dipole axis.

    Pattern [cos(pi/2 cos(theta)) / sin(theta)]^2, peak-normalized to
    ``peak_gain_dbi``; the axial value (theta = 0 or pi) is the limit 0.
    Accepts scalars or arrays.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < -1e-12) or np.any(theta > math.pi + 1e-12):
        raise ValueError("theta must lie in [0, pi]")
    s = np.sin(theta)
    scale = 10.0 ** (peak_gain_dbi / 10.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pattern = np.where(
            s > 1e-9,
            (np.cos(0.5 * math.pi * np.cos(theta)) / np.where(s > 1e-9, s, 1.0)) ** 2,
            0.0,
        )
    out = scale * pattern
    return float(out) if out.ndim == 0 else out


def free_space_rms_field(power_w: float, gain: float, distance: float) -> float:
    """RMS E-field of the direct path in free space: sqrt(30 P G) / d."""
    if not distance > 0:
        raise ValueError("distance must be > 0")
    return math.sqrt(30.0 * power_w * gain) / distance


@dataclass(frozen=True)
class ReceiverGrid:
    """Regular isotropic-receiver lattice at one or more heights."""
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    spacing: float = 3.0
    heights: tuple[float, ...] = DEFAULT_HEIGHTS

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be > 0")
        if not self.heights:
            raise ValueError("grid needs at least one height")
        if self.x_range[1] < self.x_range[0] or self.y_range[1] < self.y_range[0]:
            raise ValueError("grid extent must be non-negative")

    def axis_points(self, lo, hi):
        n = int(math.floor((hi - lo) / self.spacing + 1e-9)) + 1
        return lo + self.spacing * np.arange(n)

    @property
    def shape(self):
        nx = len(self.axis_points(*self.x_range))
        ny = len(self.axis_points(*self.y_range))
        return len(self.heights), ny, nx


def generate_grid(grid: ReceiverGrid, scene: Scene | None = None):
    """All receiver points in row-major order (height, then y, then x).

    Points strictly inside a solid box of the scene are dropped and returned
    separately so runs can report them.
    """
    xs = grid.axis_points(*grid.x_range)
    ys = grid.axis_points(*grid.y_range)
    kept = []
    removed = []
    for h in grid.heights:
        for y in ys:
            for x in xs:
                p = np.array([x, y, h])
                if scene is not None and scene.point_in_solid(p):
                    removed.append(p)
                else:
                    kept.append(p)
    kept_arr = np.asarray(kept, dtype=float).reshape(-1, 3)
    removed_arr = np.asarray(removed, dtype=float).reshape(-1, 3)
    return kept_arr, removed_arr
