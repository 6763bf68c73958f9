"""Simulation and periodic-orbit analysis of an inclined vibro-impact harvester."""
from .model import (Forcing, NondimParams, ParamFamily, ParameterError, PhysicalParams,
                    forcing_eval, nondimensionalize)

__all__ = [
    "Forcing",
    "NondimParams",
    "ParamFamily",
    "ParameterError",
    "PhysicalParams",
    "forcing_eval",
    "nondimensionalize",
]
