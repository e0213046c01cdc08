"""Distributed learning over directed graphs with automated stepsizes and finite-time exact ratio consensus."""

from .config import ExperimentConfig, load_config
from .consensus import FtercEngine, learn_minimal_poly
from .graph import Digraph, default_weights, random_strongly_connected
from .optimizer import DlasFtc, TrajectoryRecord, run_experiment
from .problems import build_problem, generate_regression_data
from .stepsize import StepsizeState

__all__ = [
    "Digraph",
    "DlasFtc",
    "ExperimentConfig",
    "FtercEngine",
    "StepsizeState",
    "TrajectoryRecord",
    "build_problem",
    "default_weights",
    "generate_regression_data",
    "learn_minimal_poly",
    "load_config",
    "random_strongly_connected",
    "run_experiment",
]
