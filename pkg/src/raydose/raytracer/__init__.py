"""Multipath ray engine: SBR launch, image-exact correction, field synthesis."""

from .params import (TraceParams, PropagationPath, FieldGrid, ETA0,
                     received_power_dbm)
from .launcher import CandidateSequence, launch_directions, launch_rays
from .epc import exact_path_correction
from .coefficients import (fresnel_reflection, slab_reflection,
                           surface_reflection, utd_diffraction,
                           utd_coefficient, transition_function)
from .fields import FieldEvaluator, path_field, total_field
from .engine import Engine, simulate_field, field_grids_by_height, eligible_edges

__all__ = [
    "TraceParams", "PropagationPath", "FieldGrid", "ETA0",
    "received_power_dbm", "CandidateSequence", "launch_directions",
    "launch_rays", "exact_path_correction", "fresnel_reflection",
    "slab_reflection", "surface_reflection", "utd_diffraction",
    "utd_coefficient", "transition_function", "FieldEvaluator", "path_field",
    "total_field", "Engine", "simulate_field", "field_grids_by_height",
    "eligible_edges",
]
