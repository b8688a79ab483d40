"""Bayesian quantile regression of longitudinal outcomes on tensor (image) covariates."""
from .model import Dataset, Hyperparams
from .sampler import SamplerConfig, run_chain
from .inference import ChainOutput

__version__ = "0.1.0"

__all__ = ["Dataset", "Hyperparams", "SamplerConfig", "run_chain", "ChainOutput", "__version__"]
