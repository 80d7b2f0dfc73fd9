"""Quantum-Train: generate every weight of a classical CNN from a hybrid state.

Basis state ``i < m`` (ascending order) yields weight ``a_i``: the quantum
branch contributes ``G(bits_i, p_hat_i)`` and the classical branch
``H(bits_i, f(bits_i))``.  The assembled vector instantiates the target CNN,
whose cross-entropy on a minibatch is the training loss.
"""

from __future__ import annotations

import math

import numpy as np

from hpqs import rng as rng_mod
from hpqs.autodiff import Tape
from hpqs.config import ExperimentConfig
from hpqs.core import ClassicalBranch, HpqsModel, Postprocessor, QuantumBranch, hybrid_predict, registry_trainables
from hpqs.data import load_mnist
from hpqs.mps import MpsDecoder
from hpqs.nqs import qt_nqs
from hpqs.quantum import MAX_QUBITS, build_qt_ansatz
from hpqs.shots import QuantumReadout
from hpqs.tasks.common import EVAL_KEY, TRAIN_KEY, SeedResult, TaskResult, budget_for, make_optimizer, minibatches, step
from hpqs.tasks.target import TargetSpec, cross_entropy, get_target, instantiate_target


def qubits_for(m: int) -> int:
    """Smallest ``n`` with ``2**n >= m``."""
    if m < 1:
        raise ValueError(f"need at least one target parameter, got {m}")
    n = max(1, (m - 1).bit_length())
    if n > MAX_QUBITS:
        raise ValueError(f"{m} target parameters need {n} qubits, more than {MAX_QUBITS}")
    return n


def load_qt_data(config: ExperimentConfig):
    arch = config.qt
    s = load_mnist(config.data_dir, train_limit=arch.train_limit, test_limit=arch.test_limit)
    return s.train_x[:, None], s.train_y, s.test_x[:, None], s.test_y


def build_generator(config: ExperimentConfig, seed: int, n_qubits: int, layers: int, nqs_hidden: int,
                    bond_g: int, bond_h: int, d_out: int, noise: float, scale: float,
                    init: str = "identity") -> HpqsModel:
    """Hybrid weight generator shared by the QT and QPA tasks."""
    quantum = classical = None
    G = H = Postprocessor.identity()
    if config.variant != "nqs":
        readout = QuantumReadout(build_qt_ansatz(n_qubits, layers), budget=budget_for(config, n_qubits),
                                 noise=config.noise_preset())
        quantum = QuantumBranch.build(readout, rng_mod.stream(seed, "init-theta"))
        G = Postprocessor.mps(MpsDecoder.build(n_qubits + 1, bond_g, d_out, rng_mod.stream(seed, "init-G"),
                                               noise=noise, output_scale=scale, init=init))
    if not config.variant.startswith("pqc"):
        classical = ClassicalBranch(qt_nqs(n_qubits, rng_mod.stream(seed, "init-gamma"), hidden=nqs_hidden))
        H = Postprocessor.mps(MpsDecoder.build(n_qubits + 1, bond_h, d_out, rng_mod.stream(seed, "init-H"),
                                               noise=noise, output_scale=scale, init=init), squash="sigmoid")
    return HpqsModel(config.effective_lam, quantum, classical, G, H)


def build_qt_model(config: ExperimentConfig, seed: int) -> tuple[HpqsModel, TargetSpec]:
    arch = config.qt
    spec = get_target(arch.target)
    n = qubits_for(spec.n_params)
    model = build_generator(config, seed, n, arch.layers, arch.nqs_hidden, arch.bond_g, arch.bond_h, 1,
                            arch.mps_noise, arch.mps_scale, arch.mps_init)
    return model, spec


def generate_weights(model: HpqsModel, m: int, seed: int, key: tuple[int, ...]):
    return hybrid_predict(model, np.arange(m), seed=seed, key=key)


def evaluate_qt(model: HpqsModel, spec: TargetSpec, x, y, seed: int, epoch: int, batch_size: int = 256) -> float:
    with Tape():
        net = instantiate_target(spec, generate_weights(model, spec.n_params, seed, (EVAL_KEY, epoch)))
        correct = sum(
            int((net(x[i : i + batch_size]).data.argmax(axis=1) == y[i : i + batch_size]).sum())
            for i in range(0, len(y), batch_size)
        )
    if model.quantum is not None:
        model.quantum.discard()
    return correct / len(y)


def train_qt_seed(config: ExperimentConfig, seed: int, data) -> SeedResult:
    train_x, train_y, test_x, test_y = data
    model, spec = build_qt_model(config, seed)
    opt = make_optimizer(config)
    result = SeedResult(seed, registry_trainables(model)[1])
    for epoch in range(config.epochs):
        losses = []
        for s, idx in enumerate(minibatches(len(train_y), config.qt.batch_size, seed, epoch)):
            with Tape():
                a = generate_weights(model, spec.n_params, seed, (TRAIN_KEY, epoch, s))
                loss = cross_entropy(instantiate_target(spec, a)(train_x[idx]), train_y[idx])
                step(model, loss, opt)
            losses.append(loss.item())
        acc = evaluate_qt(model, spec, test_x, test_y, seed, epoch)
        result.epochs.append({"epoch": epoch, "loss": float(np.mean(losses)), "accuracy": acc})
    return result


def run_qt(config: ExperimentConfig, data=None) -> TaskResult:
    if config.task != "qt":
        raise ValueError(f"run_qt got a {config.task!r} config")
    data = load_qt_data(config) if data is None else data
    return TaskResult("qt", config.variant, [train_qt_seed(config, s, data) for s in config.seeds])


def qt_qubits_report(m: int) -> str:
    n = qubits_for(m)
    return f"m={m} -> n={n} (2^{n}={1 << n}, ceil(log2 m)={math.ceil(math.log2(m))})"
