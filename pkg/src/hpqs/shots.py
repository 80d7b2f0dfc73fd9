"""Finite-shot sampling, Pauli-trajectory noise and Hoeffding error bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np

from hpqs import rng as rng_mod
from hpqs.quantum import (
    Circuit,
    Gate,
    Statevector,
    apply_pauli,
    exact_probabilities,
    simulate_batch,
    z_expectations,
)


@dataclass(frozen=True)
class ShotBudget:
    """Shot count expressed as a multiple of the Hilbert space size 2**n."""

    multiplier: float
    n_qubits: int

    def __post_init__(self) -> None:
        if not self.multiplier > 0:
            raise ValueError(f"shot multiplier must be positive, got {self.multiplier}")
        if self.n_shot < 1:
            raise ValueError(f"budget {self.multiplier} x 2^{self.n_qubits} resolves to zero shots")

    @property
    def n_shot(self) -> int:
        return int(round(self.multiplier * (1 << self.n_qubits)))

    @property
    def per_state(self) -> float:
        return self.n_shot / (1 << self.n_qubits)


@dataclass
class EmpiricalDistribution:
    n_qubits: int
    counts: np.ndarray
    n_shot: int

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (1 << self.n_qubits,):
            raise ValueError(f"expected {1 << self.n_qubits} counts, got {self.counts.shape}")
        if self.counts.min() < 0 or int(self.counts.sum()) != self.n_shot:
            raise ValueError("counts must be nonnegative and sum to n_shot")

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.n_shot


@dataclass(frozen=True)
class NoisePreset:
    name: str
    p1: float = 0.0
    p2: float = 0.0
    p_ro: float = 0.0

    def __post_init__(self) -> None:
        for label in ("p1", "p2", "p_ro"):
            value = getattr(self, label)
            if not 0.0 <= value < 1.0 and not (label == "p_ro" and value == 1.0):
                raise ValueError(f"preset {self.name!r}: {label}={value} outside [0, 1)")

    @property
    def is_ideal(self) -> bool:
        return self.p1 == 0.0 and self.p2 == 0.0 and self.p_ro == 0.0


# Stand-ins for hardware noise models; override through the experiment config.
PRESETS: dict[str, NoisePreset] = {
    "ideal": NoisePreset("ideal", 0.0, 0.0, 0.0),
    "noisy-a": NoisePreset("noisy-a", 0.001, 0.01, 0.02),
    "noisy-b": NoisePreset("noisy-b", 0.002, 0.02, 0.03),
}


def resolve_preset(name: str, overrides: Mapping[str, Mapping[str, float]] | None = None) -> NoisePreset:
    table = dict(PRESETS)
    for key, probs in (overrides or {}).items():
        table[key] = NoisePreset(key, **probs)
    try:
        return table[name]
    except KeyError:
        raise KeyError(f"unknown noise preset {name!r}; known presets: {sorted(table)}") from None


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def sample_counts(probs: np.ndarray, n_shot: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial counts for each probability row of a (B, K) array."""
    probs = np.clip(np.atleast_2d(probs), 0.0, None)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return rng.multinomial(n_shot, probs)


def flip_readout(counts: np.ndarray, n_qubits: int, p_ro: float, rng: np.random.Generator) -> np.ndarray:
    """Flip every bit of every sampled bitstring independently with probability ``p_ro``."""
    if p_ro == 0.0:
        return counts
    b, k = counts.shape
    outcomes = np.repeat(np.tile(np.arange(k), b), counts.reshape(-1))
    owners = np.repeat(np.arange(b), counts.sum(axis=1))
    weights = 1 << (n_qubits - 1 - np.arange(n_qubits))
    flips = (rng.random((outcomes.size, n_qubits)) < p_ro).astype(np.int64) @ weights
    flipped = outcomes ^ flips
    out = np.zeros(b * k, dtype=np.int64)
    np.add.at(out, owners * k + flipped, 1)
    return out.reshape(b, k)


def sample_shots(psi: Statevector, budget: ShotBudget, rng_seed, p_ro: float = 0.0) -> EmpiricalDistribution:
    """Draw ``budget.n_shot`` measurements of ``psi`` in the computational basis."""
    if budget.n_qubits != psi.n_qubits:
        raise ValueError(f"budget for {budget.n_qubits} qubits, state has {psi.n_qubits}")
    gen = _generator(rng_seed)
    counts = sample_counts(exact_probabilities(psi)[None, :], budget.n_shot, gen)
    counts = flip_readout(counts, psi.n_qubits, p_ro, gen)
    return EmpiricalDistribution(psi.n_qubits, counts[0], budget.n_shot)


# --------------------------------------------------------------------------
# noise trajectories
# --------------------------------------------------------------------------


@dataclass
class PauliInsertions:
    """Pauli errors drawn for one batch of trajectories.

    ``plan[k]`` lists ``(rows, qubit, codes)`` applied after gate ``k``;
    codes are 1/2/3 for X/Y/Z.
    """

    plan: dict[int, list[tuple[np.ndarray, int, np.ndarray]]] = field(default_factory=dict)

    def count(self, batch: int) -> np.ndarray:
        """Number of erroneous gate locations per trajectory."""
        hits = np.zeros(batch, dtype=np.int64)
        for entries in self.plan.values():
            touched = np.unique(np.concatenate([rows for rows, _, _ in entries]))
            hits[touched] += 1
        return hits


def draw_insertions(circuit: Circuit, preset: NoisePreset, batch: int, rng: np.random.Generator) -> PauliInsertions:
    """Sample which gates of each of ``batch`` trajectories are followed by a Pauli error."""
    plan: dict[int, list] = {}
    for k, gate in enumerate(circuit.gates):
        p = preset.p2 if gate.kind == "CNOT" else preset.p1
        if p == 0.0:
            continue
        hit = np.flatnonzero(rng.random(batch) < p)
        if hit.size == 0:
            continue
        if gate.kind == "CNOT":
            pair = rng.integers(1, 16, size=hit.size)  # uniform over the 15 non-identity pairs
            plan[k] = [(hit, gate.control, pair // 4), (hit, gate.target, pair % 4)]
        else:
            plan[k] = [(hit, gate.target, rng.integers(1, 4, size=hit.size))]
    return PauliInsertions(plan)


def simulate_noisy_batch(
    circuit: Circuit,
    theta,
    preset: NoisePreset,
    rng: np.random.Generator,
    inputs=None,
) -> tuple[np.ndarray, PauliInsertions]:
    """One independent Pauli trajectory per batch row."""
    params_rows = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    batch = params_rows.shape[0]
    if inputs is not None:
        batch = max(batch, np.atleast_2d(inputs).shape[0])
    insertions = draw_insertions(circuit, preset, batch, rng)
    n = circuit.n_qubits

    def hook(state: np.ndarray, k: int, gate: Gate) -> None:
        for rows, qubit, codes in insertions.plan.get(k, ()):
            keep = codes != 0
            apply_pauli(state, rows[keep], qubit, n, codes[keep])

    hook_fn = hook if insertions.plan else None
    return simulate_batch(circuit, theta, inputs, hook=hook_fn), insertions


def apply_noise_trajectory(circuit: Circuit, theta, preset: NoisePreset, rng_seed) -> Statevector:
    """Simulate one Monte-Carlo trajectory of ``circuit`` under gate depolarizing noise.

    Readout flips are not part of the state; pass ``preset.p_ro`` to
    :func:`sample_shots`.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ValueError("apply_noise_trajectory expects a single parameter vector")
    states, _ = simulate_noisy_batch(circuit, theta, preset, _generator(rng_seed))
    return Statevector(circuit.n_qubits, states[0])


# --------------------------------------------------------------------------
# branch readout
# --------------------------------------------------------------------------


@dataclass
class QuantumReadout:
    """Evaluate a circuit into basis probabilities or per-qubit <Z>, exactly or from shots.

    Every call is keyed by ``(seed, key, branch)`` so forward passes and
    parameter-shift evaluations draw independent, reproducible shot and noise
    streams.
    """

    circuit: Circuit
    mode: Literal["probabilities", "expectation"] = "probabilities"
    budget: ShotBudget | None = None
    noise: NoisePreset = PRESETS["ideal"]

    @property
    def finite(self) -> bool:
        return self.budget is not None

    def __call__(self, theta, inputs=None, *, seed: int = 0, key: tuple[int, ...] = (), branch=None) -> np.ndarray:
        labels = tuple(key) + ((0,) if branch is None else (1, *branch))
        n = self.circuit.n_qubits
        if self.noise.p1 or self.noise.p2:
            states, _ = simulate_noisy_batch(
                self.circuit, theta, self.noise, rng_mod.stream(seed, "noise", *labels), inputs
            )
        else:
            states = simulate_batch(self.circuit, theta, inputs)
        probs = exact_probabilities(states)
        if self.budget is not None:
            gen = rng_mod.stream(seed, "shots", *labels)
            counts = sample_counts(probs, self.budget.n_shot, gen)
            counts = flip_readout(counts, n, self.noise.p_ro, gen)
            probs = counts / self.budget.n_shot
        elif self.noise.p_ro:
            probs = _readout_channel(probs, n, self.noise.p_ro)
        if self.mode == "expectation":
            return z_expectations(probs, n)
        return probs


def _readout_channel(probs: np.ndarray, n: int, p_ro: float) -> np.ndarray:
    """Exact effect of independent readout flips on probability rows."""
    flip = np.array([[1 - p_ro, p_ro], [p_ro, 1 - p_ro]])
    out = probs.reshape((probs.shape[0],) + (2,) * n)
    for q in range(n):
        out = np.moveaxis(np.tensordot(out, flip, axes=([1 + q], [0])), -1, 1 + q)
    return out.reshape(probs.shape)


# --------------------------------------------------------------------------
# error bounds
# --------------------------------------------------------------------------


def hoeffding_epsilon(n_qubits: int, n_shot: int, delta: float) -> float:
    """Deviation ``eps`` reached with confidence ``1 - delta`` at ``n_shot / 2**n`` shots per state."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if n_shot < 1:
        raise ValueError(f"n_shot must be >= 1, got {n_shot}")
    return math.sqrt((1 << n_qubits) * math.log(2.0 / delta) / (2.0 * n_shot))


def hoeffding_tail(epsilon: float, n_shot_per_state: float) -> float:
    """Upper bound ``min(1, 2 exp(-2 eps^2 n'))`` on P(|p_hat - p| >= eps)."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    return min(1.0, 2.0 * math.exp(-2.0 * epsilon * epsilon * n_shot_per_state))
