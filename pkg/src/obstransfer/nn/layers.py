"""Layer descriptors and the sequential network built from them."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from obstransfer.nn import tensor as T
from obstransfer.nn.tensor import Tensor

ACTIVATIONS = ("linear", "relu", "tanh")


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    activation: str = "linear"


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    activation: str = "relu"


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class UnitNormalize:
    pass


Layer = Union[Dense, Conv2d, Flatten, UnitNormalize]


def _activate(x: Tensor, name: str) -> Tensor:
    if name == "relu":
        return T.relu(x)
    if name == "tanh":
        return T.tanh(x)
    return x


def _init_bound(activation: str, fan_in: int, fan_out: int) -> float:
    # Kaiming-uniform for ReLU, Xavier-uniform otherwise
    if activation == "relu":
        return float(np.sqrt(6.0 / fan_in))
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def output_shape(layers: Sequence[Layer], input_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape; raises ValueError when layers do not compose."""
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        if isinstance(layer, Dense):
            if shape != (layer.in_dim,):
                raise ValueError(f"layer {i}: Dense expects ({layer.in_dim},), got {shape}")
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            shape = (layer.out_dim,)
        elif isinstance(layer, Conv2d):
            if len(shape) != 3 or shape[0] != layer.in_ch:
                raise ValueError(f"layer {i}: Conv2d expects ({layer.in_ch}, H, W), got {shape}")
            _, h, w = shape
            if h < layer.kernel or w < layer.kernel:
                raise ValueError(f"layer {i}: kernel {layer.kernel} too large for {h}x{w}")
            shape = (layer.out_ch, (h - layer.kernel) // layer.stride + 1,
                     (w - layer.kernel) // layer.stride + 1)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, UnitNormalize):
            if i != len(layers) - 1:
                raise ValueError("UnitNormalize may only be the final layer")
            if len(shape) != 1:
                raise ValueError("UnitNormalize needs flat input")
        else:
            raise TypeError(f"unknown layer {layer!r}")
    return shape


class Network:
    """Sequential stack of layers with its own parameters.

    Inputs are batches: ``(N, dim)`` for vector networks, ``(N, C, H, W)``
    for convolutional ones.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int], rng: np.random.Generator):
        self.layers = tuple(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.output_shape = output_shape(self.layers, self.input_shape)
        self.params: list[Tensor] = []
        self._layer_params: list[tuple[Tensor, ...]] = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                b = _init_bound(layer.activation, layer.in_dim, layer.out_dim)
                w = T.parameter(rng.uniform(-b, b, size=(layer.in_dim, layer.out_dim)))
                bias = T.parameter(np.zeros(layer.out_dim))
                ps = (w, bias)
            elif isinstance(layer, Conv2d):
                k = layer.kernel
                fan_in, fan_out = layer.in_ch * k * k, layer.out_ch * k * k
                b = _init_bound(layer.activation, fan_in, fan_out)
                w = T.parameter(rng.uniform(-b, b, size=(layer.out_ch, layer.in_ch, k, k)))
                bias = T.parameter(np.zeros(layer.out_ch))
                ps = (w, bias)
            else:
                ps = ()
            self._layer_params.append(ps)
            self.params.extend(ps)

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = T.constant(x)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"network expects input (N, {self.input_shape}), got {x.shape}")
        for layer, ps in zip(self.layers, self._layer_params):
            if isinstance(layer, Dense):
                x = _activate(T.add_bias(T.matmul(x, ps[0]), ps[1]), layer.activation)
            elif isinstance(layer, Conv2d):
                x = _activate(T.add_channel_bias(T.conv2d(x, ps[0], layer.stride), ps[1]),
                              layer.activation)
            elif isinstance(layer, Flatten):
                x = T.reshape(x, (x.shape[0], -1))
            else:
                x = T.unit_normalize(x)
        return x

    def predict(self, x) -> np.ndarray:
        """Forward pass on plain arrays, returning plain arrays (no graph)."""
        with T.no_grad():
            return self.forward(np.asarray(x, dtype=np.float64)).data

    # -------------------------------------------------------- weight handling

    def get_weights(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        if len(weights) != len(self.params):
            raise ValueError(f"expected {len(self.params)} arrays, got {len(weights)}")
        for p, w in zip(self.params, weights):
            w = np.asarray(w, dtype=np.float64)
            if w.shape != p.shape:
                raise ValueError(f"weight shape {w.shape} does not match parameter {p.shape}")
            p.data = w.copy()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def clone(self) -> "Network":
        other = copy.copy(self)
        other.params = [T.parameter(p.data.copy()) for p in self.params]
        it = iter(other.params)
        other._layer_params = [tuple(next(it) for _ in ps) for ps in self._layer_params]
        return other

    def freeze(self) -> "Network":
        """Stop gradient accumulation into this network's parameters."""
        for p in self.params:
            p.requires_grad = False
            p.grad = None
        return self

    def param_shapes(self) -> list[tuple[int, ...]]:
        return [p.shape for p in self.params]


def vector_encoder(in_dim: int, encoding_dim: int, hidden: int = 64) -> list[Layer]:
    return [Dense(in_dim, hidden, "relu"), Dense(hidden, encoding_dim), UnitNormalize()]


def pixel_encoder(image_shape: tuple[int, int, int], encoding_dim: int) -> list[Layer]:
    """Three conv layers (16/32/32 channels) + linear projection + unit norm.

    ``image_shape`` is (C, H, W). Kernel 5 with stride 2 when the image is
    large enough, kernel 3 stride 1 for tiny grids such as an 8x8 maze.
    """
    c, h, w = image_shape
    kernel, stride = (5, 2) if min(h, w) >= 29 else (3, 1)
    layers: list[Layer] = []
    ch = c
    for out in (16, 32, 32):
        layers.append(Conv2d(ch, out, kernel, stride, "relu"))
        ch = out
    layers.append(Flatten())
    flat = output_shape(layers, image_shape)[0]
    layers += [Dense(flat, encoding_dim), UnitNormalize()]
    return layers


def q_head(encoding_dim: int, num_actions: int, hidden: int = 64) -> list[Layer]:
    return [Dense(encoding_dim, hidden, "relu"), Dense(hidden, num_actions)]
