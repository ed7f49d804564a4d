"""Cycle-emulated core: configuration, machine, analytic reference models."""

from .config import ArchConfig, square_array_model
from .core import ExecutionReport, Machine, MachineError

__all__ = [
    "ArchConfig",
    "square_array_model",
    "ExecutionReport",
    "Machine",
    "MachineError",
]
