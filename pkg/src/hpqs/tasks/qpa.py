"""Chunked LoRA generation for a toy frozen linear layer.

The adapter vector of length ``r (d + k)`` is cut into ``n_ch`` chunks of
``n_mlp`` entries.  Chunk ``i`` comes from basis state ``i`` on
``ceil(log2 n_ch)`` qubits, through decoders with an ``n_mlp``-wide output
leg.  The flat vector fills A (r x k) then B (d x r), row-major, and the
tail beyond ``r (d + k)`` is dropped.  The downstream objective is the mean
squared error between ``x (W0 + (alpha / r) B A)^T`` and a fixed target
mapping ``x (W0 + D)^T`` with a random rank-``r`` ``D``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hpqs import autodiff as ad
from hpqs import rng as rng_mod
from hpqs.autodiff import Tape, Tensor
from hpqs.config import ExperimentConfig
from hpqs.core import HpqsModel, hybrid_predict, registry_trainables
from hpqs.tasks.common import EVAL_KEY, TRAIN_KEY, SeedResult, TaskResult, make_optimizer, minibatches, step
from hpqs.tasks.qt import build_generator

PROBLEM_SEED = 20240917  # the frozen layer and target are the same for every training seed


def n_chunks(m: int, n_mlp: int) -> int:
    if m < 0 or n_mlp < 1:
        raise ValueError(f"invalid sizes m={m}, n_mlp={n_mlp}")
    n_ch = -(-m // n_mlp)
    if n_ch == 0:
        raise ValueError("no parameters to generate (n_ch = 0)")
    return n_ch


def qpa_qubits(m: int, n_mlp: int) -> int:
    """``ceil(log2 ceil(m / n_mlp))`` in exact integer arithmetic."""
    return (n_chunks(m, n_mlp) - 1).bit_length()


@dataclass(frozen=True)
class LoraShape:
    d: int
    k: int
    rank: int
    n_mlp: int

    @property
    def m(self) -> int:
        return self.rank * (self.d + self.k)

    @property
    def n_ch(self) -> int:
        return n_chunks(self.m, self.n_mlp)

    @property
    def n_qubits(self) -> int:
        """At least one qubit, even when a single chunk suffices."""
        return max(1, qpa_qubits(self.m, self.n_mlp))


def assemble_lora(chunks: Tensor, shape: LoraShape) -> tuple[Tensor, Tensor]:
    """(n_ch, n_mlp) chunk rows to (A, B); row order is the basis index."""
    if chunks.shape != (shape.n_ch, shape.n_mlp):
        raise ValueError(f"expected chunks of shape {(shape.n_ch, shape.n_mlp)}, got {chunks.shape}")
    flat = ad.reshape(chunks, (shape.n_ch * shape.n_mlp,))
    na = shape.rank * shape.k
    a = ad.reshape(flat[:na], (shape.rank, shape.k))
    b = ad.reshape(flat[na : shape.m], (shape.d, shape.rank))
    return a, b


@dataclass
class QpaProblem:
    w0: np.ndarray  # (d, k), frozen
    target: np.ndarray  # (d, k) = w0 + low-rank delta
    x: np.ndarray  # (samples, k)

    @classmethod
    def build(cls, d: int, k: int, rank: int, samples: int, seed: int = PROBLEM_SEED) -> "QpaProblem":
        gen = rng_mod.stream(seed, "qpa-problem")
        w0 = gen.normal(0.0, 1.0 / math.sqrt(k), (d, k))
        delta = gen.normal(0.0, 1.0, (d, rank)) @ gen.normal(0.0, 1.0, (rank, k)) / math.sqrt(rank * k)
        return cls(w0, w0 + delta, gen.normal(size=(samples, k)))

    def loss(self, a: Tensor, b: Tensor, scaling: float, rows=None) -> Tensor:
        x = self.x if rows is None else self.x[rows]
        weight = Tensor(self.w0) + scaling * (b @ a)
        pred = Tensor(x) @ ad.transpose(weight, (1, 0))
        return ad.mse_loss(pred, Tensor(x @ self.target.T))


def build_qpa_model(config: ExperimentConfig, seed: int) -> tuple[HpqsModel, LoraShape]:
    arch = config.qpa
    shape = LoraShape(arch.d, arch.k, arch.rank, arch.n_mlp)
    model = build_generator(config, seed, shape.n_qubits, arch.layers, arch.nqs_hidden, arch.bond_g, arch.bond_h,
                            arch.n_mlp, arch.mps_noise, arch.mps_scale, arch.mps_init)
    return model, shape


def generate_lora(model: HpqsModel, shape: LoraShape, seed: int, key: tuple[int, ...], order=None):
    """Evaluate chunks in ``order`` (default ascending) and reassemble them by basis index."""
    order = np.arange(shape.n_ch) if order is None else np.asarray(order)
    if sorted(order.tolist()) != list(range(shape.n_ch)):
        raise ValueError("order must be a permutation of the chunk indices")
    rows = hybrid_predict(model, order, seed=seed, key=key)
    chunks = rows[np.argsort(order)]
    return assemble_lora(chunks, shape)


def evaluate_qpa(model: HpqsModel, shape: LoraShape, problem: QpaProblem, scaling: float, seed: int, tag: int) -> float:
    with Tape():
        a, b = generate_lora(model, shape, seed, (EVAL_KEY, tag))
        value = problem.loss(a, b, scaling).item()
    if model.quantum is not None:
        model.quantum.discard()
    return value


def train_qpa_seed(config: ExperimentConfig, seed: int, problem: QpaProblem) -> SeedResult:
    arch = config.qpa
    model, shape = build_qpa_model(config, seed)
    scaling = arch.alpha / arch.rank
    opt = make_optimizer(config)
    result = SeedResult(seed, registry_trainables(model)[1])
    result.epochs.append({"epoch": -1, "loss": None, "eval_loss": evaluate_qpa(model, shape, problem, scaling, seed, 0)})
    for epoch in range(config.epochs):
        losses = []
        for s, rows in enumerate(minibatches(len(problem.x), arch.batch_size, seed, epoch)):
            with Tape():
                a, b = generate_lora(model, shape, seed, (TRAIN_KEY, epoch, s))
                loss = problem.loss(a, b, scaling, rows)
                step(model, loss, opt)
            losses.append(loss.item())
        eval_loss = evaluate_qpa(model, shape, problem, scaling, seed, epoch + 1)
        result.epochs.append({"epoch": epoch, "loss": float(np.mean(losses)), "eval_loss": eval_loss})
    return result


def run_qpa_gen(config: ExperimentConfig, problem: QpaProblem | None = None) -> TaskResult:
    if config.task != "qpa-gen":
        raise ValueError(f"run_qpa_gen got a {config.task!r} config")
    arch = config.qpa
    problem = problem or QpaProblem.build(arch.d, arch.k, arch.rank, arch.samples)
    return TaskResult("qpa-gen", config.variant, [train_qpa_seed(config, s, problem) for s in config.seeds], "eval_loss")
