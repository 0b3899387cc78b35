"""Covariate-driven Markov models for behaviour sequences, fit by Polya-Gamma
augmented Gibbs sampling with multiple imputation over uncertain labels."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DimensionError,
    NumericError,
    ParameterError,
    ValidationError,
)
from .gibbs import PosteriorChain, PriorSpec, SamplerConfig, run_chain
from .imputation import ImputationSet, argmax_labels, draw_imputations, select_dataset
from .model import (
    CoefficientState,
    DesignLayout,
    ModelData,
    StateAlphabet,
    transition_matrices,
    transition_row,
)
from .pg import draw_pg, pg_mean, pg_variance
from .simulate import SimScenario, make_scenario, simulate_sequences

__all__ = [
    "CoefficientState",
    "ConfigurationError",
    "DesignLayout",
    "DimensionError",
    "ImputationSet",
    "ModelData",
    "NumericError",
    "ParameterError",
    "PosteriorChain",
    "PriorSpec",
    "SamplerConfig",
    "SimScenario",
    "StateAlphabet",
    "ValidationError",
    "argmax_labels",
    "draw_imputations",
    "draw_pg",
    "make_scenario",
    "pg_mean",
    "pg_variance",
    "run_chain",
    "select_dataset",
    "simulate_sequences",
    "transition_matrices",
    "transition_row",
]
