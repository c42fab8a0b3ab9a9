"""Numpy layers with hand-written backward passes."""
from . import functional
from .layers import (AttentionLayer, EdgeDecoder, GRUCell, LayerNorm, Linear, MailAttentionUpdater,
                     RNNCell, SnapshotCombiner, TimeEncoder, TimeProjection)
from .params import Adam, ParameterTape, load_params, max_relative_error, numerical_grad, save_params

__all__ = [
    "functional", "AttentionLayer", "EdgeDecoder", "GRUCell", "LayerNorm", "Linear",
    "MailAttentionUpdater", "RNNCell", "SnapshotCombiner", "TimeEncoder", "TimeProjection",
    "Adam", "ParameterTape", "load_params", "save_params", "max_relative_error", "numerical_grad",
]
