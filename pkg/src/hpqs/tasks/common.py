"""Shared training plumbing: seeded model pieces, minibatches, per-seed results."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hpqs import rng as rng_mod
from hpqs.config import ExperimentConfig
from hpqs.core import HpqsModel, registry_trainables
from hpqs.optim import OptimizerState, optimizer_step
from hpqs.shots import ShotBudget

# key prefixes for readout streams; the readout appends the shift branch itself
TRAIN_KEY, EVAL_KEY = 0, 1


@dataclass
class SeedResult:
    seed: int
    n_params: int
    epochs: list[dict] = field(default_factory=list)  # {"epoch", "loss", "accuracy"}

    @property
    def final(self) -> dict:
        return self.epochs[-1] if self.epochs else {}


@dataclass
class TaskResult:
    task: str
    variant: str
    seeds: list[SeedResult]
    metric: str = "accuracy"

    @property
    def final_metric(self) -> np.ndarray:
        return np.array([s.final[self.metric] for s in self.seeds], dtype=np.float64)

    @property
    def mean(self) -> float:
        return float(self.final_metric.mean())

    @property
    def std(self) -> float:
        return float(self.final_metric.std()) if len(self.seeds) > 1 else 0.0

    @property
    def n_params(self) -> int:
        return self.seeds[0].n_params


def budget_for(config: ExperimentConfig, n_qubits: int) -> ShotBudget | None:
    return ShotBudget(config.shots, n_qubits) if config.finite else None


def make_optimizer(config: ExperimentConfig) -> OptimizerState:
    return OptimizerState(kind=config.optimizer, learning_rate=config.lr, weight_decay=config.weight_decay)


def minibatches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = rng_mod.stream(seed, "shuffle", epoch).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def step(model: HpqsModel, loss, opt: OptimizerState) -> None:
    model.backward(loss)
    optimizer_step(opt, registry_trainables(model)[0])
