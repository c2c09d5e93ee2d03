"""Minimal numpy autodiff: tensors, layers, Adam, gradient checking."""
from obstransfer.nn.layers import (Conv2d, Dense, Flatten, Network, UnitNormalize, pixel_encoder,
                                   q_head, vector_encoder)
from obstransfer.nn.optim import Adam, AdamState, adam_step
from obstransfer.nn.tensor import GraphError, Tensor, ZeroNormError

__all__ = [
    "Adam", "AdamState", "Conv2d", "Dense", "Flatten", "GraphError", "Network", "Tensor",
    "UnitNormalize", "ZeroNormError", "adam_step", "pixel_encoder", "q_head", "vector_encoder",
]
