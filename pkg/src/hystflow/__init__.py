"""Unsaturated flow with Preisach hysteresis: time-discrete scheme and diagnostics."""
from .density import DecayFamily, Tabulated, UniformBox, validate_compatibility
from .grid import interval_mesh, rectangle_mesh
from .hysteresis import MemoryState, ThresholdGrid, discrete_play_step
from .problem import BoundaryValue, Kappa, Problem
from .stepper import StepperConfig, run, solve_step, tau_sweep

__version__ = "0.1.0"

__all__ = [
    "BoundaryValue", "DecayFamily", "Kappa", "MemoryState", "Problem", "StepperConfig",
    "Tabulated", "ThresholdGrid", "UniformBox", "discrete_play_step", "interval_mesh",
    "rectangle_mesh", "run", "solve_step", "tau_sweep", "validate_compatibility",
]
