"""Bayesian optimization with fully-Bayesian Gaussian-process surrogates.

The main entry point is :class:`practicalbo.controller.Optimizer`, which
exposes a suggest/observe loop over a :class:`ParameterSpace`.
"""

from .controller import (
    Dimension,
    Observation,
    Optimizer,
    OptimizerState,
    ParameterSpace,
    StrategyConfig,
    load_state,
    save_state,
)
from .gp import GpHyperparams, GpPosterior, gp_fit, gp_predict, log_marginal_likelihood

__all__ = [
    "Dimension",
    "GpHyperparams",
    "GpPosterior",
    "Observation",
    "Optimizer",
    "OptimizerState",
    "ParameterSpace",
    "StrategyConfig",
    "gp_fit",
    "gp_predict",
    "load_state",
    "log_marginal_likelihood",
    "save_state",
]

__version__ = "0.1.0"
