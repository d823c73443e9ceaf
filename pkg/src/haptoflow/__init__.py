"""Asymptotic-preserving micro-macro finite-volume solver for haptotaxis-type
kinetic transport equations with a spherical-harmonics moment closure."""

__version__ = "0.1.0"

from .basis import MomentBasis, build_basis
from .grid import Grid, State, build_grid, zero_state
from .integrator import StepControl, run, stable_dt, step_imex1, step_imex2
from .model import ModelField, ScalingNumbers
from .operators import Scheme, SchemeConfig

__all__ = [
    "MomentBasis", "build_basis",
    "Grid", "State", "build_grid", "zero_state",
    "ModelField", "ScalingNumbers",
    "Scheme", "SchemeConfig",
    "StepControl", "run", "stable_dt", "step_imex1", "step_imex2",
    "__version__",
]
