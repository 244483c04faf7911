"""Simulation, reference generation and receding-horizon tracking control
for a bi-modal (aerial/ground) passive-wheeled bi-copter."""

from .core import (
    ControlInput,
    Mode,
    Orientation,
    RobotState,
    VehicleParams,
)

__all__ = [
    "ControlInput",
    "Mode",
    "Orientation",
    "RobotState",
    "VehicleParams",
]

__version__ = "0.1.0"
