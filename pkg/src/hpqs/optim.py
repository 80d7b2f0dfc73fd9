"""First-order optimizers over lists of :class:`~hpqs.autodiff.Tensor` parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from hpqs.autodiff import Tensor

OptimizerKind = Literal["sgd", "adam", "adamw"]


@dataclass
class OptimizerState:
    kind: OptimizerKind = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    first_moments: list[np.ndarray] = field(default_factory=list)
    second_moments: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.kind = self.kind.lower()  # type: ignore[assignment]
        if self.kind not in ("sgd", "adam", "adamw"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def optimizer_step(state: OptimizerState, params: Sequence[Tensor]) -> None:
    """Apply one update to ``params`` in place, then clear their grads."""
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ValueError(f"optimizer_step: parameters without gradient at indices {missing}")
    if state.kind != "sgd" and not state.first_moments:
        state.first_moments = [np.zeros_like(p.data) for p in params]
        state.second_moments = [np.zeros_like(p.data) for p in params]
    if state.first_moments and len(state.first_moments) != len(params):
        raise ValueError(
            f"optimizer_step: state tracks {len(state.first_moments)} parameters, got {len(params)}"
        )

    state.step_count += 1
    t = state.step_count
    lr = state.learning_rate
    for i, p in enumerate(params):
        g = p.grad
        if state.kind == "sgd":
            if state.weight_decay:
                g = g + state.weight_decay * p.data
            p.data = p.data - lr * g
        else:
            if state.kind == "adamw" and state.weight_decay:
                p.data = p.data - lr * state.weight_decay * p.data
            m = state.first_moments[i] = state.beta1 * state.first_moments[i] + (1 - state.beta1) * g
            v = state.second_moments[i] = state.beta2 * state.second_moments[i] + (1 - state.beta2) * g * g
            m_hat = m / (1 - state.beta1**t)
            v_hat = v / (1 - state.beta2**t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.grad = None
