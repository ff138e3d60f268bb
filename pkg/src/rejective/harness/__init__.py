"""Experiment configuration, Monte Carlo engine, enumeration oracle and CLI."""

from .config import EstimatorSpec, ExperimentConfig, PopulationSpec, config_from_dict, fast_variant, load_config
from .experiment import (ExperimentResult, ReplicateRecord, population_r2, replicate_rng, run_experiment,
                         theoretical_varred)
from .oracle import Enumeration, enumerate_two_phase, identity_checks
from .three_phase import ThreePhaseConfig, load_three_phase_config, run_api_style_three_phase

__all__ = [
    "EstimatorSpec", "ExperimentConfig", "PopulationSpec", "config_from_dict", "fast_variant", "load_config",
    "ExperimentResult", "ReplicateRecord", "population_r2", "replicate_rng", "run_experiment", "theoretical_varred",
    "Enumeration", "enumerate_two_phase", "identity_checks",
    "ThreePhaseConfig", "load_three_phase_config", "run_api_style_three_phase",
]
