"""Locally linear embedding with EM-fitted stochastic reconstruction weights,
alongside factor analysis and probabilistic PCA under one latent linear model."""

from .data_io import DatasetSpec, generate, load_csv, save_results
from .estimators import FactorAnalysis, LocallyLinearEmbedding, ProbabilisticPCA, StochasticLLE
from .exceptions import (
    DivergedError,
    InvalidInputError,
    NotPSDError,
    NumericalError,
    ParseError,
    WrongModeError,
)
from .neighborhood import DataMatrix, NeighborhoodSystem, knn_graph, neighborhood_preservation
from .stochastic import EMConfig, EMTrace, PriorCovariance, WeightPosterior

__version__ = "0.1.0"

__all__ = [
    "DataMatrix",
    "DatasetSpec",
    "DivergedError",
    "EMConfig",
    "EMTrace",
    "FactorAnalysis",
    "InvalidInputError",
    "LocallyLinearEmbedding",
    "NeighborhoodSystem",
    "NotPSDError",
    "NumericalError",
    "ParseError",
    "PriorCovariance",
    "ProbabilisticPCA",
    "StochasticLLE",
    "WeightPosterior",
    "WrongModeError",
    "generate",
    "knn_graph",
    "load_csv",
    "neighborhood_preservation",
    "save_results",
]
