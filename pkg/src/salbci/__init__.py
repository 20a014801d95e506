"""Salience-adjusted Bayesian cue integration for context-aware emotion recognition."""

from .distributions import (
    BASIC_EMOTION,
    VALENCE,
    CategoricalDistribution,
    LabelSpace,
    RatingSet,
    discretize_valence,
    expected_valence,
    from_ratings,
    make_distribution,
    smooth,
)
from .fusion import FusionConfig, PriorSpec, bci, empirical_prior, salience_bci
from .metrics import evaluate, kld, mse_rmse, pearson

__version__ = "0.1.0"

__all__ = [
    "BASIC_EMOTION",
    "VALENCE",
    "CategoricalDistribution",
    "FusionConfig",
    "LabelSpace",
    "PriorSpec",
    "RatingSet",
    "bci",
    "discretize_valence",
    "empirical_prior",
    "evaluate",
    "expected_valence",
    "from_ratings",
    "kld",
    "make_distribution",
    "mse_rmse",
    "pearson",
    "salience_bci",
    "smooth",
]
