"""Trace parameters and the path / field-grid result types."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ETA0 = 376.73          # free-space impedance, ohms
C0 = 299792458.0


@dataclass(frozen=True)
class TraceParams:
    ray_spacing_deg: float = 0.2
    max_reflections: int = 6
    max_diffractions: int = 1
    max_transmissions: int = 0
    rx_threshold_dbm: float = -250.0
    capture_safety: float = 1.5
    vehicle_edges: bool = True      # vehicle roof edges as diffraction sources
    tx_combining: str = "power"     # "power" | "coherent" across transmitters

    def __post_init__(self):
        if not self.ray_spacing_deg > 0:
            raise ValueError("ray_spacing_deg must be > 0")
        if self.max_reflections < 0:
            raise ValueError("max_reflections must be >= 0")
        if self.max_diffractions not in (0, 1):
            raise ValueError("at most one diffraction per path is supported")
        if self.max_transmissions != 0:
            raise ValueError("transmitted rays are not supported (refractions = 0)")
        if not math.isfinite(self.rx_threshold_dbm):
            raise ValueError("rx_threshold_dbm must be finite")
        if self.tx_combining not in ("power", "coherent"):
            raise ValueError("tx_combining must be 'power' or 'coherent'")

    @property
    def capture_slope(self) -> float:
        """Capture radius per meter of unfolded path length."""
        return math.tan(math.radians(self.ray_spacing_deg) / 2.0) * self.capture_safety


@dataclass(frozen=True)
class PropagationPath:
    """One resolved multipath component between a transmitter and a receiver.

    ``interactions`` is the ordered event list starting with ("emit", None);
    reflections carry the surface index, diffraction the edge index and
    scatter the tile index.  ``field`` is the complex RMS phasor at the
    receiver.
    """
    interactions: tuple
    points: np.ndarray            # (n, 3) tx ... rx
    total_length: float
    field: complex
    delay: float

    @property
    def n_reflections(self) -> int:
        return sum(1 for kind, _ in self.interactions if kind == "reflect")

    @property
    def has_diffraction(self) -> bool:
        return any(kind == "diffract" for kind, _ in self.interactions)


CSV_HEADER = "x,y,z,E_rms_V_per_m,P_dBm,path_count"


@dataclass
class FieldGrid:
    """Per-receiver field results in fixed row-major receiver order."""
    points: np.ndarray            # (K, 3)
    e_rms: np.ndarray             # V/m
    p_dbm: np.ndarray
    path_count: np.ndarray
    discarded: np.ndarray         # below the receive threshold
    frequency: float
    height: Optional[float] = None

    def to_csv(self, path):
        lines = [CSV_HEADER]
        for i in range(len(self.points)):
            x, y, z = (float(v) for v in self.points[i])
            e = 0.0 if self.discarded[i] else float(self.e_rms[i])
            p = float(self.p_dbm[i])
            lines.append(f"{x!r},{y!r},{z!r},{e!r},{p!r},{int(self.path_count[i])}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, frequency=None, threshold_dbm=-250.0):
        with open(path) as fh:
            header = fh.readline().strip()
            if header != CSV_HEADER:
                raise ValueError(f"{path}: unexpected field CSV header {header!r}")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        pts = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows])
        e = np.array([float(r[3]) for r in rows])
        p = np.array([float(r[4]) for r in rows])
        n = np.array([int(r[5]) for r in rows])
        discarded = p < threshold_dbm
        h = float(pts[0, 2]) if len(pts) and np.allclose(pts[:, 2], pts[0, 2]) else None
        return cls(pts, e, p, n, discarded, frequency or 0.0, h)


def received_power_dbm(e_rms, wavelength):
    """Isotropic received power from an RMS field: E^2 lambda^2 / (4 pi eta0)."""
    e_rms = np.asarray(e_rms, dtype=float)
    with np.errstate(divide="ignore"):
        p_w = e_rms ** 2 * wavelength ** 2 / (4.0 * math.pi * ETA0)
        out = 10.0 * np.log10(p_w * 1000.0)
    return float(out) if out.ndim == 0 else out
