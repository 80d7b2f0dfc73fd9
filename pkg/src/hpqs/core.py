"""Hybrid blending of a quantum branch and a classical branch.

A prediction is ``lam * G(quantum value) + (1 - lam) * H(classical value)``.
Gradients reach the classical parameters and the postprocessor parameters
through the tape.  The circuit angles get theirs from the parameter-shift
rule: every quantum readout enters the tape as a leaf, and after the tape's
backward pass the leaf's gradient is contracted with the shift Jacobian of
the readout (fresh shots for every shifted evaluation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from hpqs import autodiff as ad
from hpqs.autodiff import Tensor
from hpqs.mps import MpsDecoder, mps_contract
from hpqs.nqs import NqsNetwork, nqs_classifier_forward, nqs_forward
from hpqs.quantum import basis_bits, parameter_shift_grad
from hpqs.shots import QuantumReadout

POSTPROCESSOR_KINDS = ("identity", "mps_decoder", "qubit_group_softmax", "affine")


@dataclass
class Postprocessor:
    """One of four closed kinds.

    ``mps_decoder`` feeds the basis bits plus the branch value (last site) into
    a decoder; ``squash="sigmoid"`` first maps an unbounded value into [0, 1].
    ``qubit_group_softmax`` sums per-qubit values within each group, optionally
    applies a learnable per-group scale and shift, then takes a softmax.
    """

    kind: str
    decoder: MpsDecoder | None = None
    squash: Literal["none", "sigmoid"] = "none"
    groups: tuple[tuple[int, ...], ...] = ()
    scale: Tensor | None = None
    shift: Tensor | None = None

    def __post_init__(self) -> None:
        if self.kind not in POSTPROCESSOR_KINDS:
            raise ValueError(f"unknown postprocessor kind {self.kind!r}; expected one of {POSTPROCESSOR_KINDS}")
        if self.kind == "mps_decoder" and self.decoder is None:
            raise ValueError("mps_decoder postprocessor needs a decoder")
        if self.kind == "qubit_group_softmax" and not self.groups:
            raise ValueError("qubit_group_softmax needs at least one group")
        if self.kind == "affine" and (self.scale is None or self.shift is None):
            raise ValueError("affine postprocessor needs scale and shift")

    @classmethod
    def identity(cls) -> "Postprocessor":
        return cls("identity")

    @classmethod
    def mps(cls, decoder: MpsDecoder, squash: str = "none") -> "Postprocessor":
        return cls("mps_decoder", decoder=decoder, squash=squash)

    @classmethod
    def group_softmax(cls, groups: Sequence[Sequence[int]], affine: bool = False) -> "Postprocessor":
        groups = tuple(tuple(int(q) for q in g) for g in groups)
        if not affine:
            return cls("qubit_group_softmax", groups=groups)
        k = len(groups)
        return cls(
            "qubit_group_softmax",
            groups=groups,
            scale=Tensor(np.ones(k), requires_grad=True),
            shift=Tensor(np.zeros(k), requires_grad=True),
        )

    @classmethod
    def affine(cls, scale: float = 1.0, shift: float = 0.0) -> "Postprocessor":
        return cls(
            "affine",
            scale=Tensor(np.array(scale, dtype=np.float64), requires_grad=True),
            shift=Tensor(np.array(shift, dtype=np.float64), requires_grad=True),
        )

    @property
    def parameters(self) -> list[Tensor]:
        params = self.decoder.parameters if self.decoder is not None else []
        return params + [t for t in (self.scale, self.shift) if t is not None]

    def __call__(self, value: Tensor, bits: np.ndarray | None = None) -> Tensor:
        if self.kind == "identity":
            return value
        if self.kind == "affine":
            return value * self.scale + self.shift
        if self.kind == "qubit_group_softmax":
            logits = ad.concat(
                [ad.sum(value[..., list(g)], axis=-1, keepdims=True) for g in self.groups], axis=-1
            )
            if self.scale is not None:
                logits = logits * self.scale + self.shift
            return ad.softmax(logits, axis=-1)
        # mps_decoder
        if bits is None:
            raise ValueError("mps_decoder postprocessor needs the basis bits")
        if self.squash == "sigmoid":
            value = ad.sigmoid(value)
        bits = np.asarray(bits, dtype=np.float64)
        cols = [bits[:, j] for j in range(bits.shape[1])] + [value]
        out = mps_contract(self.decoder, cols)
        return ad.reshape(out, (bits.shape[0],)) if self.decoder.d_out == 1 else out


@dataclass
class _Pending:
    leaf: Tensor
    inputs: np.ndarray | None
    seed: int
    key: tuple[int, ...]


@dataclass
class QuantumBranch:
    """Circuit angles ``theta`` plus a readout; records leaves for the shift-rule backward."""

    readout: QuantumReadout
    theta: Tensor
    pending: list[_Pending] = field(default_factory=list)

    @classmethod
    def build(cls, readout: QuantumReadout, rng: np.random.Generator) -> "QuantumBranch":
        n = readout.circuit.n_params
        return cls(readout, Tensor(rng.uniform(-np.pi, np.pi, n), requires_grad=True))

    @property
    def parameters(self) -> list[Tensor]:
        return [self.theta]

    def evaluate(self, inputs=None, *, seed: int = 0, key: tuple[int, ...] = ()) -> Tensor:
        value = self.readout(self.theta.data, inputs, seed=seed, key=key)
        leaf = Tensor(value, requires_grad=True, name="quantum_readout")
        self.pending.append(_Pending(leaf, None if inputs is None else np.asarray(inputs), seed, tuple(key)))
        return leaf

    def accumulate(self) -> None:
        """Add the shift-rule gradient of every pending readout into ``theta.grad``."""
        total = np.zeros_like(self.theta.data)
        for p in self.pending:
            g = p.leaf.grad
            if g is None or not np.any(g):
                continue

            def f(t, branch, p=p):
                return self.readout(t, p.inputs, seed=p.seed, key=p.key, branch=branch)

            jac = parameter_shift_grad(self.readout.circuit, self.theta.data, f)
            total += np.tensordot(jac, g, axes=g.ndim)
        self.pending.clear()
        self.theta.grad = total if self.theta.grad is None else self.theta.grad + total

    def discard(self) -> None:
        self.pending.clear()


@dataclass
class ClassicalBranch:
    net: NqsNetwork
    mode: Literal["bitstring", "features"] = "bitstring"

    @property
    def parameters(self) -> list[Tensor]:
        return self.net.parameters

    def evaluate(self, query) -> Tensor:
        if self.mode == "bitstring":
            return nqs_forward(self.net, query)
        return nqs_classifier_forward(self.net, query)


@dataclass
class HpqsModel:
    """``lam`` is a fixed hyperparameter.  A missing branch requires ``lam`` of 1 or 0."""

    lam: float
    quantum: QuantumBranch | None
    classical: ClassicalBranch | None
    G: Postprocessor = field(default_factory=Postprocessor.identity)
    H: Postprocessor = field(default_factory=Postprocessor.identity)

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.quantum is None and self.lam != 0.0:
            raise ValueError("a model without a quantum branch needs lambda = 0")
        if self.classical is None and self.lam != 1.0:
            raise ValueError("a model without a classical branch needs lambda = 1")
        if self.quantum is None and self.classical is None:
            raise ValueError("model needs at least one branch")

    def blend(self, q: Tensor | None, c: Tensor | None) -> Tensor:
        if q is None:
            return c
        if c is None:
            return q
        if q.shape != c.shape:
            raise ValueError(f"branch output shapes differ: quantum {q.shape}, classical {c.shape}")
        # 1.0 * q + 0.0 * c == q bit for bit, and vice versa, while keeping every gradient defined
        return self.lam * q + (1.0 - self.lam) * c

    def backward(self, loss: Tensor) -> None:
        """Tape backward, then the shift-rule contribution for ``theta``."""
        ad.backward(loss)
        if self.quantum is not None:
            self.quantum.accumulate()


def hybrid_predict(model: HpqsModel, indices, *, seed: int = 0, key: tuple[int, ...] = ()) -> Tensor:
    """Blended per-basis-state outputs for basis ``indices`` (QT / QPA wiring).

    The quantum branch is read out once over the whole register; its entries
    at ``indices`` feed ``G`` together with the basis bits.
    """
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    n = _n_qubits(model)
    if indices.size and (indices.min() < 0 or indices.max() >= 1 << n):
        raise ValueError(f"basis indices must lie in [0, {1 << n})")
    bits = basis_bits(indices, n)
    q = c = None
    if model.quantum is not None:
        probs = model.quantum.evaluate(seed=seed, key=key)  # (1, 2^n)
        q = model.G(ad.reshape(probs, (probs.shape[-1],))[indices], bits)
    if model.classical is not None:
        c = model.H(model.classical.evaluate(bits), bits)
    return model.blend(q, c)


def hybrid_expectation_predict(model: HpqsModel, x, *, seed: int = 0, key: tuple[int, ...] = ()) -> Tensor:
    """Class probabilities for a (B, features) batch (QML wiring).

    The quantum branch reads per-qubit <Z> with the features bound to the
    encoder slots; ``G`` groups and softmaxes them.  ``H`` maps classifier
    logits onto the simplex.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    q = c = None
    if model.quantum is not None:
        q = model.G(model.quantum.evaluate(encode_angles(x), seed=seed, key=key))
    if model.classical is not None:
        c = model.H(model.classical.evaluate(x))
    return model.blend(q, c)


def encode_angles(x: np.ndarray) -> np.ndarray:
    """Pixel intensities in [0, 1] become rotation angles in [0, pi]."""
    return np.pi * np.asarray(x, dtype=np.float64)


def registry_trainables(model: HpqsModel) -> tuple[list[Tensor], int]:
    """Trainable tensors in the fixed order theta, gamma, G, H, with the scalar count."""
    params: list[Tensor] = []
    if model.quantum is not None:
        params += model.quantum.parameters
    if model.classical is not None:
        params += model.classical.parameters
    params += model.G.parameters if model.quantum is not None else []
    params += model.H.parameters if model.classical is not None else []
    return params, sum(p.size for p in params)


def _n_qubits(model: HpqsModel) -> int:
    if model.quantum is not None:
        return model.quantum.readout.circuit.n_qubits
    return model.classical.net.input_width
