"""Estimating treatment effects when randomised players share team games.

Treated players pass the treatment to everyone in their game, so control
players who play alongside them are contaminated.  The package simulates such
experiments, counts each player's exposure to treated games, and compares
naive differences in means with inverse-propensity estimators of the effect
at each exposure level.
"""

__version__ = "0.1.0"

from .domain import ConfigError, DataError, ExperimentDataset, GameSession, GroupLabel, PlayerRecord
from .estimators import ESTIMATORS, PropensityConfig, run_all_estimators
from .evaluation import McConfig, run_monte_carlo
from .simulator import SimulationConfig, case_config, simulate_experiment, true_tau

__all__ = [
    "ConfigError",
    "DataError",
    "ESTIMATORS",
    "ExperimentDataset",
    "GameSession",
    "GroupLabel",
    "McConfig",
    "PlayerRecord",
    "PropensityConfig",
    "SimulationConfig",
    "case_config",
    "run_all_estimators",
    "run_monte_carlo",
    "simulate_experiment",
    "true_tau",
]
