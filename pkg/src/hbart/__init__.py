"""Heteroscedastic Bayesian additive regression trees.

``y = f(x) + s(x) Z`` with ``f`` a sum of ``m`` regression trees and
``s^2`` a product of ``m'`` variance trees, fit by Gibbs sampling.
"""

from .data import CutpointGrid, DataError, DataSet, load_csv, make_cutpoints, train_test_split, write_csv
from .priors import PriorConfig, calibrate_tau, calibrate_variance_prior, default_config
from .sampler import ChainState, PosteriorDraws, SamplerSettings, gibbs_iteration, predict, run_chain, run_chains
from .trees import DecisionTree, TreeDepthPrior

__version__ = "0.1.0"

__all__ = [
    "CutpointGrid", "DataError", "DataSet", "load_csv", "make_cutpoints",
    "train_test_split", "write_csv", "PriorConfig", "calibrate_tau",
    "calibrate_variance_prior", "default_config", "ChainState", "PosteriorDraws",
    "SamplerSettings", "gibbs_iteration", "predict", "run_chain", "run_chains",
    "DecisionTree", "TreeDepthPrior",
]
