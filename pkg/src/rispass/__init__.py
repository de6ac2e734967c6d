"""Simulation and learned optimization of RIS-assisted pinching-antenna downlinks."""

from .scenario import PAPlacement, Scenario, ScenarioBatch, SystemParams, sample_batch, sample_scenario
from .objective import Beamformer, RISConfig, Solution, energy_efficiency, sum_rate

__version__ = "0.1.0"

__all__ = [
    "SystemParams",
    "Scenario",
    "ScenarioBatch",
    "PAPlacement",
    "RISConfig",
    "Beamformer",
    "Solution",
    "sample_scenario",
    "sample_batch",
    "sum_rate",
    "energy_efficiency",
]
