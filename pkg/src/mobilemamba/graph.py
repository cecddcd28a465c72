"""Executable layer graph.

A network is a tree of layers: leaves own parameters and compute, containers
(``Sequential``, ``Residual`` and the MRFFI composites) own ordered child
sequences. Every leaf carries its fully qualified dotted name, so parameter
names are ``f"{leaf.name}.{local}"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import F32, BatchNormParams, ConvSpec, ShapeError

Shape = tuple[int, ...]


class Layer:
    kind = "layer"
    name: str

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, shape: Shape) -> Shape:
        raise NotImplementedError

    def sequences(self) -> list["Sequential"]:
        """Child sequences (containers only)."""
        return []

    def tensors(self) -> dict[str, np.ndarray]:
        """Local parameter/buffer name -> array (leaves only)."""
        return {}

    def set_tensor(self, local: str, value: np.ndarray) -> None:
        raise KeyError(f"{self.name} has no tensor {local!r}")

    def n_params(self) -> int:
        return sum(int(v.size) for v in self.tensors().values())

    def is_leaf(self) -> bool:
        return not self.sequences()

    def signature(self) -> tuple:
        return (self.kind, self.name, tuple((k, v.shape) for k, v in self.tensors().items()))


@dataclass(eq=False)
class Conv2d(Layer):
    name: str
    weight: np.ndarray
    bias: np.ndarray | None
    spec: ConvSpec
    kind = "conv2d"

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.spec.groups

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.spec)

    def out_shape(self, shape):
        n, c, h, w = shape
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expects {self.in_channels} input channels, got {c}")
        return (n, self.out_channels, self.spec.out_size(h), self.spec.out_size(w))

    def tensors(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def set_tensor(self, local, value):
        if local not in ("weight", "bias"):
            super().set_tensor(local, value)
        setattr(self, local, value)


@dataclass(eq=False)
class Linear(Layer):
    """Dense layer on the channel axis; ``(n, c, 1, 1)`` inputs are flattened."""

    name: str
    weight: np.ndarray
    bias: np.ndarray | None
    kind = "linear"

    def __call__(self, x):
        if x.ndim == 4:
            x = x.reshape(x.shape[0], -1)
        return T.linear(x, self.weight, self.bias)

    def out_shape(self, shape):
        feat = int(np.prod(shape[1:]))
        if feat != self.weight.shape[1]:
            raise ShapeError(f"{self.name}: expects {self.weight.shape[1]} features, got {feat}")
        return (shape[0], self.weight.shape[0])

    def tensors(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def set_tensor(self, local, value):
        if local not in ("weight", "bias"):
            super().set_tensor(local, value)
        setattr(self, local, value)


_BN_FIELDS = {"weight": "gamma", "bias": "beta", "running_mean": "running_mean", "running_var": "running_var"}


@dataclass(eq=False)
class BatchNorm(Layer):
    name: str
    params: BatchNormParams
    kind = "batchnorm"

    def __call__(self, x):
        if x.ndim == 2:
            return T.batchnorm2d(x[:, :, None, None], self.params)[:, :, 0, 0]
        return T.batchnorm2d(x, self.params)

    def out_shape(self, shape):
        if shape[1] != self.params.channels:
            raise ShapeError(f"{self.name}: expects {self.params.channels} channels, got {shape[1]}")
        return shape

    def tensors(self):
        return {k: getattr(self.params, v) for k, v in _BN_FIELDS.items()}

    def set_tensor(self, local, value):
        if local not in _BN_FIELDS:
            super().set_tensor(local, value)
        setattr(self.params, _BN_FIELDS[local], value)

    def n_params(self):
        # running statistics are buffers, not parameters
        return 2 * self.params.channels


_ACTIVATIONS = {"gelu": T.gelu, "silu": T.silu, "relu": T.relu}


@dataclass(eq=False)
class Activation(Layer):
    name: str
    fn: str
    kind = "activation"

    def __post_init__(self):
        if self.fn not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.fn!r}")

    def __call__(self, x):
        return _ACTIVATIONS[self.fn](x)

    def out_shape(self, shape):
        return shape

    def signature(self):
        return (self.kind, self.name, self.fn)


@dataclass(eq=False)
class GlobalAvgPool(Layer):
    name: str
    kind = "avgpool"

    def __call__(self, x):
        return T.global_avg_pool(x)

    def out_shape(self, shape):
        return (shape[0], shape[1], 1, 1)


@dataclass(eq=False)
class Sequential(Layer):
    name: str
    layers: list[Layer] = field(default_factory=list)
    kind = "sequential"

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def sequences(self):
        return [self]

    def is_leaf(self):
        return False


@dataclass(eq=False)
class Residual(Layer):
    """``x + body(x)``."""

    name: str
    body: Sequential
    kind = "residual"

    def __call__(self, x):
        return x + self.body(x)

    def out_shape(self, shape):
        out = self.body.out_shape(shape)
        if out != shape:
            raise ShapeError(f"{self.name}: residual body maps {shape} to {out}")
        return shape

    def sequences(self):
        return [self.body]


def iter_layers(root: Layer) -> Iterator[Layer]:
    """Pre-order walk over every layer (containers and leaves)."""
    yield root
    for seq in root.sequences():
        if seq is root:
            for layer in seq.layers:
                yield from iter_layers(layer)
        else:
            yield from iter_layers(seq)


def iter_leaves(root: Layer) -> Iterator[Layer]:
    for layer in iter_layers(root):
        if layer.is_leaf():
            yield layer


def named_tensors(root: Layer) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for leaf in iter_leaves(root):
        for local, arr in leaf.tensors().items():
            full = f"{leaf.name}.{local}"
            if full in out:
                raise ValueError(f"duplicate tensor name {full}")
            out[full] = arr
    return out


def tensor_owners(root: Layer) -> dict[str, tuple[Layer, str]]:
    return {
        f"{leaf.name}.{local}": (leaf, local)
        for leaf in iter_leaves(root)
        for local in leaf.tensors()
    }


@dataclass
class LayerInfo:
    name: str
    kind: str
    in_shape: Shape
    out_shape: Shape


@dataclass(eq=False)
class BlockGraph:
    """A validated network: root layer plus the build-time shape trace."""

    root: Sequential
    input_shape: Shape
    config: object = None
    layers: list[LayerInfo] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> Shape:
        self.layers = []
        shape = self._trace(self.root, tuple(self.input_shape))
        self.output_shape = shape
        return shape

    def _trace(self, layer: Layer, shape: Shape) -> Shape:
        out = layer.out_shape(shape)
        if layer.is_leaf():
            self.layers.append(LayerInfo(layer.name, layer.kind, shape, out))
        else:
            # record leaves inside containers with their own shapes
            _trace_children(layer, shape, self.layers)
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = T.as_tensor(x)
        if x.shape[1:] != tuple(self.input_shape[1:]):
            raise ShapeError(f"model expects input (n, {self.input_shape[1:]}), got {x.shape}")
        return self.root(x)

    def leaves(self) -> list[Layer]:
        return list(iter_leaves(self.root))

    def layer_count(self) -> int:
        return len(self.leaves())

    def state_dict(self) -> dict[str, np.ndarray]:
        return named_tensors(self.root)

    def n_params(self) -> int:
        return sum(leaf.n_params() for leaf in self.leaves())

    def signature(self) -> list[tuple]:
        return [leaf.signature() for leaf in self.leaves()]


def _trace_children(layer: Layer, shape: Shape, rows: list[LayerInfo]) -> None:
    trace = getattr(layer, "trace", None)
    if trace is not None:
        trace(shape, rows)
        return
    for seq in layer.sequences():
        s = shape
        for child in seq.layers:
            out = child.out_shape(s)
            if child.is_leaf():
                rows.append(LayerInfo(child.name, child.kind, s, out))
            else:
                _trace_children(child, s, rows)
            s = out


def as_f32(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=F32)
