"""Binary MNIST (3 vs 6) classification from 4x4 pooled images.

The quantum branch angle-encodes the 16 features, runs the trainable block
and reads per-qubit <Z>; ``G`` sums qubits (0, 1) and (2, 3) into two logits
and softmaxes them.  The classical branch is a 16 -> 1 -> 2 network whose
logits ``H`` softmaxes.  Loss is the NLL of the blended probabilities.
"""

from __future__ import annotations

import numpy as np

from hpqs import autodiff as ad
from hpqs import rng as rng_mod
from hpqs.autodiff import Tape
from hpqs.config import ExperimentConfig
from hpqs.core import (
    ClassicalBranch,
    HpqsModel,
    Postprocessor,
    QuantumBranch,
    hybrid_expectation_predict,
    registry_trainables,
)
from hpqs.data import load_mnist, qml_features
from hpqs.nqs import qml_classifier
from hpqs.quantum import qml_circuit
from hpqs.shots import QuantumReadout
from hpqs.tasks.common import EVAL_KEY, TRAIN_KEY, SeedResult, TaskResult, budget_for, make_optimizer, minibatches, step

GROUPS = ((0, 1), (2, 3))


def load_qml_data(config: ExperimentConfig):
    arch = config.qml
    splits = load_mnist(config.data_dir, classes=arch.classes, train_limit=arch.train_limit, test_limit=arch.test_limit)
    return qml_features(splits.train_x), splits.train_y, qml_features(splits.test_x), splits.test_y


def build_qml_model(config: ExperimentConfig, seed: int) -> HpqsModel:
    arch = config.qml
    lam = config.effective_lam
    quantum = classical = None
    if config.variant != "nqs":
        readout = QuantumReadout(
            qml_circuit(arch.n_layers),
            mode="expectation",
            budget=budget_for(config, 4),
            noise=config.noise_preset(),
        )
        quantum = QuantumBranch.build(readout, rng_mod.stream(seed, "init-theta"))
    if not config.variant.startswith("pqc"):
        classical = ClassicalBranch(qml_classifier(rng_mod.stream(seed, "init-gamma"), hidden=arch.hidden), "features")
    G = Postprocessor.group_softmax(GROUPS, affine=arch.affine_g and config.variant.startswith("hpqs"))
    H = Postprocessor.group_softmax(((0,), (1,)))
    return HpqsModel(lam, quantum, classical, G, H)


def evaluate_qml(model: HpqsModel, x, y, seed: int, epoch: int, batch_size: int) -> float:
    correct = 0
    for b, start in enumerate(range(0, len(y), batch_size)):
        with Tape():
            probs = hybrid_expectation_predict(
                model, x[start : start + batch_size], seed=seed, key=(EVAL_KEY, epoch, b)
            ).data
        if model.quantum is not None:
            model.quantum.discard()
        correct += int((probs.argmax(axis=1) == y[start : start + batch_size]).sum())
    return correct / len(y)


def train_qml_seed(config: ExperimentConfig, seed: int, data) -> SeedResult:
    train_x, train_y, test_x, test_y = data
    model = build_qml_model(config, seed)
    opt = make_optimizer(config)
    result = SeedResult(seed, registry_trainables(model)[1])
    bs = config.qml.batch_size
    for epoch in range(config.epochs):
        losses = []
        for s, idx in enumerate(minibatches(len(train_y), bs, seed, epoch)):
            with Tape():
                probs = hybrid_expectation_predict(model, train_x[idx], seed=seed, key=(TRAIN_KEY, epoch, s))
                loss = ad.nll_loss(ad.log(probs), train_y[idx])
                step(model, loss, opt)
            losses.append(loss.item())
        acc = evaluate_qml(model, test_x, test_y, seed, epoch, bs)
        result.epochs.append({"epoch": epoch, "loss": float(np.mean(losses)), "accuracy": acc})
    return result


def run_qml(config: ExperimentConfig, data=None) -> TaskResult:
    if config.task != "qml":
        raise ValueError(f"run_qml got a {config.task!r} config")
    data = load_qml_data(config) if data is None else data
    return TaskResult("qml", config.variant, [train_qml_seed(config, s, data) for s in config.seeds])
