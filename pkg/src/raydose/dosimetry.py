"""Whole-body SAR from incident RMS fields, and compliance checking.

Far-field scaling: wbSAR = (E_inc / E_ref)^2 * (BMI_ref / BMI) * SAR_ref,
with E_ref = 2.45 V/m.  The built-in adult and child models are their own
reference bodies, so their BMI ratio is exactly 1; custom models must supply
the reference BMI explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

E_REF = 2.45  # V/m
WB_LIMIT_DEFAULT = 0.08  # W/kg, general-public whole-body basic restriction


class DosimetryError(Exception):
    pass


@dataclass(frozen=True)
class HumanModel:
    name: str
    age: float
    sex: str
    height: float          # m
    weight: float          # kg
    bmi: float             # kg/m^2
    head_height: float     # m, field evaluation height for this model
    sar_ref: float         # W/kg at E_ref
    bmi_ref: Optional[float] = None   # None: reference body itself (ratio 1)
    e_ref: float = E_REF

    def __post_init__(self):
        if not self.sar_ref > 0:
            raise ValueError(f"model {self.name!r}: sar_ref must be > 0")
        if abs(self.e_ref - E_REF) > 1e-12:
            raise ValueError(f"model {self.name!r}: e_ref is fixed at {E_REF} V/m")
        expected = self.weight / self.height ** 2
        if abs(self.bmi - expected) > 0.02 * expected:
            raise ValueError(
                f"model {self.name!r}: BMI {self.bmi} inconsistent with "
                f"weight/height^2 = {expected:.2f}")

    @property
    def bmi_ratio(self) -> float:
        return 1.0 if self.bmi_ref is None else self.bmi_ref / self.bmi


DUKE = HumanModel("duke", 34, "male", 1.77, 70.2, 22.4, 1.70, 3.6e-5)
ELLA = HumanModel("ella", 26, "female", 1.63, 57.3, 21.6, 1.50, 4.0e-5)
NINA = HumanModel("nina", 3, "female", 0.92, 13.9, 16.4, 0.85, 6.0e-6)

BUILTIN_MODELS = {m.name: m for m in (DUKE, ELLA, NINA)}


@dataclass(frozen=True)
class ExposureLimit:
    wb_limit: float = WB_LIMIT_DEFAULT

    def __post_init__(self):
        if not self.wb_limit > 0:
            raise ValueError("whole-body limit must be positive")


def wbsar(e_inc, model: HumanModel):
    """Whole-body SAR (W/kg) at incident RMS field e_inc (V/m); quadratic."""
    e_inc = np.asarray(e_inc, dtype=float)
    if np.any(e_inc < 0):
        raise ValueError("incident field must be >= 0")
    out = (e_inc / model.e_ref) ** 2 * model.bmi_ratio * model.sar_ref
    return float(out) if out.ndim == 0 else out


def wbsar_grid(field_grid, model: HumanModel):
    """Elementwise SAR over a field grid taken at the model's head height.

    Discarded receivers propagate as NaN samples.  Raises when the grid
    height does not match the model's head height.
    """
    h = field_grid.height
    if h is None or abs(h - model.head_height) > 1e-6:
        raise DosimetryError(
            f"model {model.name!r} needs the field at head height "
            f"{model.head_height} m, got {h}")
    sar = wbsar(field_grid.e_rms, model)
    sar = np.where(field_grid.discarded, np.nan, sar)
    return sar


def check_compliance(sar_samples, limit: ExposureLimit = ExposureLimit()):
    """Verdict over SAR samples: pass iff max <= limit (inclusive).

    margin_dB = 10 log10(limit / max); NaN samples (discarded receivers) are
    ignored.
    """
    samples = np.asarray(sar_samples, dtype=float)
    samples = samples[~np.isnan(samples)]
    if samples.size == 0:
        raise DosimetryError("compliance check needs at least one SAR sample")
    peak = float(samples.max())
    if peak <= 0.0:
        return {"max": peak, "margin_dB": math.inf, "pass": True}
    margin = 10.0 * math.log10(limit.wb_limit / peak)
    return {"max": peak, "margin_dB": margin, "pass": peak <= limit.wb_limit}
