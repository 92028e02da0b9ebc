"""Model zoo: a configurable MLP and the small two-conv CNN.

Models are plain immutable descriptions; :mod:`dpfedsim.backprop` runs them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigurationError
from .params import ParamVector


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    relu: bool = False


@dataclass(frozen=True)
class Conv2D:
    in_channels: int
    out_channels: int
    kernel: int = 3
    relu: bool = True


@dataclass(frozen=True)
class MaxPool2D:
    size: int = 2


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Dense, Conv2D, MaxPool2D, Dropout, Flatten]


def _out_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, Dense):
        if shape != (layer.in_features,):
            raise ConfigurationError(f"dense layer expects ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    if isinstance(layer, Conv2D):
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ConfigurationError(f"conv layer expects ({layer.in_channels}, H, W), got {shape}")
        h, w = shape[1] - layer.kernel + 1, shape[2] - layer.kernel + 1
        if h <= 0 or w <= 0:
            raise ConfigurationError(f"input {shape} too small for {layer.kernel}x{layer.kernel} conv")
        return (layer.out_channels, h, w)
    if isinstance(layer, MaxPool2D):
        if len(shape) != 3:
            raise ConfigurationError(f"max pooling expects a (C, H, W) input, got {shape}")
        h, w = shape[1] // layer.size, shape[2] // layer.size
        if h <= 0 or w <= 0:
            raise ConfigurationError(f"input {shape} too small for {layer.size}x{layer.size} pooling")
        return (shape[0], h, w)
    if isinstance(layer, Dropout):
        if not 0.0 <= layer.rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {layer.rate}")
        return shape
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    raise ConfigurationError(f"unknown layer {layer!r}")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        out = self.shapes()[-1]
        if out != (self.num_classes,):
            raise ConfigurationError(f"final layer emits {out}, expected ({self.num_classes},)")

    def shapes(self) -> list[tuple[int, ...]]:
        """Activation shapes, starting with the input shape."""
        shapes = [tuple(self.input_shape)]
        for layer in self.layers:
            shapes.append(_out_shape(layer, shapes[-1]))
        return shapes

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                out.append((f"layer{i}.weight", (layer.in_features, layer.out_features)))
                out.append((f"layer{i}.bias", (layer.out_features,)))
            elif isinstance(layer, Conv2D):
                out.append((f"layer{i}.weight", (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)))
                out.append((f"layer{i}.bias", (layer.out_channels,)))
        return out

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())

    @property
    def has_dropout(self) -> bool:
        return any(isinstance(l, Dropout) and l.rate > 0 for l in self.layers)


def build_mlp(input_dim: int, hidden_dims, num_classes: int) -> ModelSpec:
    """Dense ReLU stack with a softmax head; empty ``hidden_dims`` gives logistic regression."""
    hidden_dims = list(hidden_dims)
    dims = [input_dim, *hidden_dims, num_classes]
    if any(int(d) <= 0 for d in dims):
        raise ConfigurationError(f"all MLP dimensions must be positive, got {dims}")
    layers = [Dense(dims[i], dims[i + 1], relu=i < len(dims) - 2) for i in range(len(dims) - 1)]
    return ModelSpec("mlp", tuple(layers), (input_dim,), num_classes)


def build_cnn(input_side: int, num_classes: int) -> ModelSpec:
    """conv3x3(32) -> conv3x3(64) -> maxpool2 -> dropout .25 -> dense128 -> dropout .5 -> dense.

    Single-channel square input, valid padding, stride 1.
    """
    if input_side < 8:
        raise ConfigurationError(f"input_side must be >= 8, got {input_side}")
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    pooled = (input_side - 4) // 2
    layers = (
        Conv2D(1, 32),
        Conv2D(32, 64),
        MaxPool2D(2),
        Dropout(0.25),
        Flatten(),
        Dense(64 * pooled * pooled, 128, relu=True),
        Dropout(0.5),
        Dense(128, num_classes),
    )
    return ModelSpec("cnn", layers, (1, input_side, input_side), num_classes)


def build_model(name: str, num_classes: int, *, input_dim: int | None = None,
                input_side: int | None = None, hidden_dims=(16,)) -> ModelSpec:
    if name == "mlp":
        if input_dim is None:
            raise ConfigurationError("mlp needs input_dim")
        return build_mlp(input_dim, hidden_dims, num_classes)
    if name == "cnn":
        if input_side is None:
            raise ConfigurationError("cnn needs input_side")
        return build_cnn(input_side, num_classes)
    raise ConfigurationError(f"unknown model {name!r}; choose 'mlp' or 'cnn'")


def init_params(model: ModelSpec, rng: np.random.Generator, dtype=np.float64) -> ParamVector:
    """Glorot-uniform weights, zero biases."""
    segments = []
    for name, shape in model.param_shapes():
        if name.endswith(".bias"):
            segments.append((name, np.zeros(shape, dtype=dtype)))
            continue
        if len(shape) == 2:
            fan_in, fan_out = shape
        else:
            receptive = shape[2] * shape[3]
            fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        segments.append((name, rng.uniform(-limit, limit, size=shape).astype(dtype)))
    return ParamVector.from_segments(segments, dtype=dtype)
