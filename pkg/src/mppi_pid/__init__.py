"""Sampling-based path following with PID gain optimization, a residual-learning
vehicle model, and numerical checks of the sampling theory.
"""
from ._rollout import BACKENDS, DEFAULT_BACKEND
from .control import (
    InputConstraints, MppiPidPlanner, MppiPlanner, OptimizerConfig, PidLaw, PidState, pid_step, project_input,
)
from .cost import CostWeights
from .dynamics import MlpParams, PhysicalParams, ResidualDynamicsModel
from .path import ReferencePath, build_hermite_path, nearest_point, pid_errors

__version__ = "0.1.0"

__all__ = [
    "BACKENDS", "DEFAULT_BACKEND", "CostWeights", "InputConstraints", "MlpParams", "MppiPidPlanner",
    "MppiPlanner", "OptimizerConfig", "PhysicalParams", "PidLaw", "PidState", "ReferencePath",
    "ResidualDynamicsModel", "build_hermite_path", "nearest_point", "pid_errors", "pid_step", "project_input",
]
