"""Return-map dynamics of inhibitory pacemaker networks.

Submodules:
    model: parameters, the leaky flow and the spike/reset rule.
    poincare: the return map on the reset section, its Jacobian and margins.
    orbits: cycle detection, refinement and Monte-Carlo classification.
    atoms: point-cloud atoms and the loops of their successor graph.
    config, cli: run configuration and the ``netdyn`` command.
"""

from .model import LeakyFlow, NetworkParams, ParamError, StateError, Tolerances, random_params, validate_params
from .orbits import (
    Cycle,
    MeasureReport,
    SystemClass,
    Verdict,
    classify_point,
    estimate_measures,
    iterate_orbit,
    refine_cycle,
)
from .poincare import first_spike, jacobian, return_map, system_constants, time_gap_margin

__version__ = "0.1.0"

__all__ = [
    "Cycle",
    "LeakyFlow",
    "MeasureReport",
    "NetworkParams",
    "ParamError",
    "StateError",
    "SystemClass",
    "Tolerances",
    "Verdict",
    "classify_point",
    "estimate_measures",
    "first_spike",
    "iterate_orbit",
    "jacobian",
    "random_params",
    "refine_cycle",
    "return_map",
    "system_constants",
    "time_gap_margin",
    "validate_params",
]
