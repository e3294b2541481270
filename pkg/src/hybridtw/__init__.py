"""Traveling-wave modelling and fault identification on hybrid HVDC grids."""
from .errors import ModelError
from .grid import FaultParams, FaultedGraph, GridGraph, build_grid, insert_fault
from .paths import Path, PathBudget, enumerate_paths
from .twmodel import FrequencyGrid, StepResponseTable, WaveModel, simulate_node

__all__ = [
    "ModelError", "FaultParams", "FaultedGraph", "GridGraph", "build_grid", "insert_fault",
    "Path", "PathBudget", "enumerate_paths", "FrequencyGrid", "StepResponseTable", "WaveModel",
    "simulate_node",
]
__version__ = "0.1.0"
