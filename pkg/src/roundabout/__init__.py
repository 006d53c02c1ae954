"""Cooperative trajectory optimization for connected vehicles at roundabouts.

The solver alternates convex approximation around the current nominal
trajectories with synchronized consensus rounds in which every vehicle
solves a small affine LQR problem, so all per-vehicle work parallelizes
across workers while hard separation and boundary constraints are kept.
"""

from .admm import AdmmConfig, AdmmWorkerState, derive_eta
from .baseline import BaselineConfig, baseline_step, simulate_baseline
from .coordinator import SolveReport, initialize_trajectories, solve, update_trajectory
from .kinematics import ControlInput, Trajectory, VehicleState
from .scenario import (
    BoundaryCloud,
    ReferencePath,
    Scenario,
    ScenarioError,
    SolverParams,
    generate_roundabout,
    load_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "AdmmWorkerState",
    "BaselineConfig",
    "BoundaryCloud",
    "ControlInput",
    "ReferencePath",
    "Scenario",
    "ScenarioError",
    "SolveReport",
    "SolverParams",
    "Trajectory",
    "VehicleState",
    "baseline_step",
    "derive_eta",
    "generate_roundabout",
    "initialize_trajectories",
    "load_scenario",
    "simulate_baseline",
    "solve",
    "update_trajectory",
]
