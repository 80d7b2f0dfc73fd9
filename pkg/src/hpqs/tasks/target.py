"""Target networks whose full weight vector is generated rather than trained directly.

A spec is an ordered layer list.  Weights are filled in layer order, each
layer's weight row-major in PyTorch layout (``(out, in)`` for linear,
``(out, in, k, k)`` for conv) followed by its bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hpqs import autodiff as ad
from hpqs.autodiff import Tensor

LAYER_KINDS = ("conv", "linear", "avgpool", "relu", "flatten")


@dataclass(frozen=True)
class Layer:
    kind: str
    n_in: int = 0
    n_out: int = 0
    k: int = 0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def weight_shape(self) -> tuple[int, ...] | None:
        if self.kind == "conv":
            return (self.n_out, self.n_in, self.k, self.k)
        if self.kind == "linear":
            return (self.n_out, self.n_in)
        return None

    @property
    def n_params(self) -> int:
        shape = self.weight_shape
        return 0 if shape is None else math.prod(shape) + self.n_out


def conv(n_in: int, n_out: int, k: int) -> Layer:
    return Layer("conv", n_in, n_out, k)


def linear(n_in: int, n_out: int) -> Layer:
    return Layer("linear", n_in, n_out)


def avgpool(k: int) -> Layer:
    return Layer("avgpool", k=k)


RELU = Layer("relu")
FLATTEN = Layer("flatten")


@dataclass(frozen=True)
class TargetSpec:
    name: str
    input_shape: tuple[int, ...]  # per example, e.g. (1, 28, 28)
    layers: tuple[Layer, ...]

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)


def mnist_cnn(c1: int, c2: int, hidden: int, name: str) -> TargetSpec:
    """conv5 -> ReLU -> pool2 -> conv5 -> ReLU -> pool2 -> fc -> ReLU -> fc(10) on 28x28 inputs."""
    return TargetSpec(
        name,
        (1, 28, 28),
        (
            conv(1, c1, 5), RELU, avgpool(2),
            conv(c1, c2, 5), RELU, avgpool(2),
            FLATTEN, linear(c2 * 16, hidden), RELU, linear(hidden, 10),
        ),
    )


TARGETS = {
    "qt_cnn_6690": mnist_cnn(8, 12, 20, "qt_cnn_6690"),
    "qt_cnn_968": mnist_cnn(4, 4, 6, "qt_cnn_968"),
}


def get_target(name: str) -> TargetSpec:
    try:
        return TARGETS[name]
    except KeyError:
        raise KeyError(f"unknown target network {name!r}; known: {sorted(TARGETS)}") from None


@dataclass
class TargetNetwork:
    spec: TargetSpec
    tensors: list[Tensor]  # weight, bias per parametrised layer, in fill order

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if x.shape[1:] != self.spec.input_shape:
            raise ValueError(f"{self.spec.name} expects inputs of shape (N, {self.spec.input_shape}), got {x.shape}")
        it = iter(self.tensors)
        for layer in self.spec.layers:
            if layer.kind == "conv":
                w, b = next(it), next(it)
                x = ad.conv2d(x, w, b)
            elif layer.kind == "linear":
                w, b = next(it), next(it)
                x = x @ ad.transpose(w, (1, 0)) + b
            elif layer.kind == "avgpool":
                x = ad.avgpool2d(x, layer.k)
            elif layer.kind == "relu":
                x = ad.relu(x)
            else:
                x = ad.reshape(x, (x.shape[0], -1))
        return x


def instantiate_target(spec: TargetSpec, a) -> TargetNetwork:
    """Fill ``spec`` from the prefix of flat vector ``a`` (differentiable when ``a`` is a Tensor)."""
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float64))
    if a.ndim != 1:
        raise ValueError(f"weight vector must be 1-D, got shape {a.shape}")
    if a.size < spec.n_params:
        raise ValueError(f"{spec.name} needs {spec.n_params} weights, got {a.size}")
    tensors, pos = [], 0
    for layer in spec.layers:
        shape = layer.weight_shape
        if shape is None:
            continue
        size = math.prod(shape)
        tensors.append(ad.reshape(a[pos : pos + size], shape))
        pos += size
        tensors.append(a[pos : pos + layer.n_out])
        pos += layer.n_out
    return TargetNetwork(spec, tensors)


def flatten(net: TargetNetwork) -> np.ndarray:
    return np.concatenate([t.data.reshape(-1) for t in net.tensors]) if net.tensors else np.zeros(0)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    return ad.nll_loss(ad.log_softmax(logits, axis=-1), labels)
