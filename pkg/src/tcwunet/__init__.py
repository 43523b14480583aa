"""Streaming TC Wave-U-Net speech enhancement with per-layer history caches."""

__version__ = "0.1.0"

from .model import (
    ModelConfig,
    ModelWeights,
    analytic_receptive_field,
    forward_offline,
    init_random,
    validate_config,
)
from .streaming import StreamConfig, StreamState, new_stream, verify_streaming_equivalence
from .weights_io import load_weights, save_weights

__all__ = [
    "ModelConfig",
    "ModelWeights",
    "StreamConfig",
    "StreamState",
    "analytic_receptive_field",
    "forward_offline",
    "init_random",
    "load_weights",
    "new_stream",
    "save_weights",
    "validate_config",
    "verify_streaming_equivalence",
]
