"""Sponge examples on toy models with a simulated accelerator."""

from ._core import (
    Translator,
    ValidationError,
    cnn_density,
    cnn_max_density,
    default_config,
    lbfgs_sponge,
    mann_whitney_u,
    natural_corpus,
    percentile,
    run_experiment,
    simulate_layers,
    tokenize,
)

__all__ = [
    "Translator",
    "ValidationError",
    "cnn_density",
    "cnn_max_density",
    "default_config",
    "lbfgs_sponge",
    "mann_whitney_u",
    "natural_corpus",
    "percentile",
    "run_experiment",
    "simulate_layers",
    "tokenize",
]
