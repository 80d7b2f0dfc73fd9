"""Neural quantum state networks over basis bitstrings, plus the direct-input classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hpqs import autodiff as ad
from hpqs.autodiff import Tensor
from hpqs.quantum import MAX_QUBITS, basis_bits

ACTIVATIONS = {"relu": ad.relu, "softplus": ad.softplus, "sigmoid": ad.sigmoid, "linear": lambda x: x}


@dataclass
class Dense:
    weight: Tensor  # (fan_in, fan_out)
    bias: Tensor  # (fan_out,)
    activation: str = "linear"

    def __call__(self, x: Tensor) -> Tensor:
        return ACTIVATIONS[self.activation](x @ self.weight + self.bias)


@dataclass
class NqsNetwork:
    """Fully connected network; ``layers[-1]`` is the output head."""

    input_width: int
    layers: list[Dense] = field(default_factory=list)

    @classmethod
    def build(
        cls,
        input_width: int,
        hidden: Sequence[tuple[int, str]],
        output_width: int,
        rng: np.random.Generator,
    ) -> "NqsNetwork":
        """Fan-in uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for weights and biases."""
        widths = [input_width] + [w for w, _ in hidden] + [output_width]
        acts = [a for _, a in hidden] + ["linear"]
        layers = []
        for fan_in, fan_out, act in zip(widths[:-1], widths[1:], acts):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            bound = 1.0 / math.sqrt(fan_in)
            w = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
            b = Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True)
            layers.append(Dense(w, b, act))
        return cls(input_width, layers)

    @property
    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in (layer.weight, layer.bias)]

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.parameters)

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-1] != self.input_width:
            raise ValueError(f"network expects input width {self.input_width}, got {x.shape[-1]}")
        for layer in self.layers:
            x = layer(x)
        return x


def qt_nqs(n_qubits: int, rng: np.random.Generator, hidden: int = 32) -> NqsNetwork:
    """``n -> hidden (ReLU) -> 1`` estimator over bitstrings."""
    return NqsNetwork.build(n_qubits, [(hidden, "relu")], 1, rng)


def qml_classifier(rng: np.random.Generator, features: int = 16, hidden: int = 1) -> NqsNetwork:
    """``16 -> 1 (ReLU) -> 2`` logits for the binary image task."""
    return NqsNetwork.build(features, [(hidden, "relu")], 2, rng)


def nqs_forward(net: NqsNetwork, bits) -> Tensor:
    """Raw scalar ``f(phi)`` for one bitstring (shape ()) or a (B, n) batch (shape (B,))."""
    bits = np.asarray(bits, dtype=np.float64)
    single = bits.ndim == 1
    batch = bits[None, :] if single else bits
    if batch.shape[-1] != net.input_width:
        raise ValueError(f"bitstring length {batch.shape[-1]} != network input width {net.input_width}")
    if net.layers[-1].weight.shape[1] != 1:
        raise ValueError("nqs_forward needs a scalar output head")
    out = ad.reshape(net(batch), (batch.shape[0],))
    return ad.reshape(out, ()) if single else out


def nqs_distribution(net: NqsNetwork, n_qubits: int) -> Tensor:
    """``softplus(f(phi_i)) / sum_j softplus(f(phi_j))`` over all 2**n basis states."""
    if n_qubits > MAX_QUBITS:
        raise ValueError(f"cannot enumerate 2^{n_qubits} basis states")
    positive = ad.softplus(nqs_forward(net, basis_bits(np.arange(1 << n_qubits), n_qubits)))
    total = ad.sum(positive)
    if total.item() < 1e-30:
        raise FloatingPointError(f"NQS normalisation vanished ({total.item():.3e})")
    return positive / total


def nqs_classifier_forward(net: NqsNetwork, x) -> Tensor:
    """Logits of shape (B, 2) for a (B, features) batch, or (2,) for one feature vector."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[-1] != net.input_width:
        raise ValueError(f"classifier expects {net.input_width} features, got {batch.shape[-1]}")
    logits = net(batch)
    return ad.reshape(logits, (logits.shape[-1],)) if single else logits
