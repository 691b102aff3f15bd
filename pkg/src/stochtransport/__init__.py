"""Stochastic neutron transport: change tables, Euler-Maruyama solvers, Monte Carlo references."""

from .errors import SimulationError, UsageError
from .model import Boundary, ChangeEntry, MaterialModel, PhaseSpaceGrid, PopulationState, change_table
from .solver import (
    EnergyProblem,
    GeneralProblem,
    PathResult,
    SlabProblem,
    run_deterministic,
    run_energy,
    run_general,
    run_slab,
    step_general,
)

__all__ = [
    "Boundary", "ChangeEntry", "EnergyProblem", "GeneralProblem", "MaterialModel", "PathResult",
    "PhaseSpaceGrid", "PopulationState", "SimulationError", "SlabProblem", "UsageError", "change_table",
    "run_deterministic", "run_energy", "run_general", "run_slab", "step_general",
]

__version__ = "0.1.0"
