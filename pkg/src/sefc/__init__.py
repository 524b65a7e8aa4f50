"""Semantic-enhanced time-series forecasting on a frozen transformer backbone.

A numpy implementation with its own reverse-mode autodiff: patch encoder, prototype
alignment, temporal-semantic cross-correlation, recurrent low-rank adapters inside a
frozen attention stack, autoregressive rollout, training and M4-style metrics.
"""

from .config import RunConfig, desk_config, load_config, tiny_config
from .model import SeLLM, partition_parameters

__all__ = ["RunConfig", "SeLLM", "desk_config", "load_config", "partition_parameters", "tiny_config"]
__version__ = "0.1.0"
