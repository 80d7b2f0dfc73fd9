"""Fast invariant checks runnable from an installed package (``hpqs selftest``)."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from hpqs import autodiff as ad
from hpqs.autodiff import Tape, Tensor
from hpqs.core import ClassicalBranch, HpqsModel, Postprocessor, QuantumBranch, hybrid_predict
from hpqs.mps import MpsDecoder, mps_contract
from hpqs.nqs import nqs_distribution, qt_nqs
from hpqs.quantum import Circuit, Gate, Observable, build_qt_ansatz, exact_expectation, exact_probabilities
from hpqs.quantum import parameter_shift_grad, simulate
from hpqs.shots import QuantumReadout, ShotBudget, hoeffding_epsilon
from hpqs.tasks.qpa import qpa_qubits


def _random_circuit(n: int, gen: np.random.Generator) -> Circuit:
    gates, slot = [], 0
    for _ in range(2):
        for q in range(n):
            gates.append(Gate(str(gen.choice(["RX", "RY", "RZ"])), q, slot=slot))
            slot += 1
        for q in range(n - 1):
            gates.append(Gate("CNOT", q + 1, control=q))
    return Circuit(n, gates)


def _fd(f, x, h):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


def check_norm(gen) -> str:
    worst = 0.0
    for _ in range(50):
        n = int(gen.integers(1, 7))
        c = _random_circuit(n, gen)
        probs = exact_probabilities(simulate(c, gen.uniform(-np.pi, np.pi, c.n_params)))
        worst = max(worst, abs(probs.sum() - 1.0))
    assert worst <= 1e-10, worst
    return f"max |sum p - 1| = {worst:.1e}"


def check_parameter_shift(gen) -> str:
    c = _random_circuit(4, gen)
    theta = gen.uniform(-np.pi, np.pi, c.n_params)
    obs = Observable.z(4, range(4))

    def f(t):
        return exact_expectation(simulate(c, t), obs)

    err = _rel(parameter_shift_grad(c, theta, f), _fd(f, theta, 1e-6))
    assert err <= 1e-6, err
    return f"relative error {err:.1e}"


def check_autodiff(gen) -> str:
    w0 = gen.normal(size=(3, 4))
    x = gen.normal(size=(5, 3))

    def loss(w):
        return ad.sum(ad.softplus(Tensor(x) @ w)).item()

    w = Tensor(w0.copy(), requires_grad=True)
    with Tape() as tape:
        out = ad.sum(ad.softplus(Tensor(x) @ w))
    tape.backward(out)
    err = _rel(w.grad.reshape(-1), _fd(lambda v: loss(Tensor(v.reshape(3, 4))), w0.reshape(-1), 1e-5))
    assert err <= 1e-4, err
    return f"relative error {err:.1e}"


def check_nqs(gen) -> str:
    probs = nqs_distribution(qt_nqs(5, gen), 5).data
    assert abs(probs.sum() - 1) <= 1e-12 and np.all(probs > 0)
    return "normalised, positive"


def check_mps(gen) -> str:
    dec = MpsDecoder.build(5, 1, 1, gen)
    for core in dec.cores:
        core.data[...] = 1.0
    out = mps_contract(dec, gen.uniform(size=(4, 5))).data
    assert np.allclose(out, 1.0, atol=1e-14)
    return "all-ones decoder outputs 1"


def check_hoeffding(gen) -> str:
    eps = hoeffding_epsilon(4, 320, 0.05)
    assert abs(eps - 0.3037) <= 1e-4, eps
    return f"eps(4, 320, 0.05) = {eps:.4f}"


def check_qpa_formula(gen) -> str:
    assert qpa_qubits(204100, 512) == 9 and qpa_qubits(1032192, 4096) == 8
    for _ in range(20):
        m, n_mlp = int(gen.integers(1, 10**7)), int(gen.integers(1, 10**4))
        n_ch, n = math.ceil(m / n_mlp), 0
        while (1 << n) < n_ch:
            n += 1
        assert qpa_qubits(m, n_mlp) == n, (m, n_mlp)
    return "N(204100, 512) = 9, N(1032192, 4096) = 8"


def check_reductions(gen) -> str:
    readout = QuantumReadout(build_qt_ansatz(3, 1), budget=ShotBudget(10, 3))
    q = QuantumBranch.build(readout, gen)
    c = ClassicalBranch(qt_nqs(3, gen, hidden=4))
    full = HpqsModel(1.0, q, c)
    idx = np.arange(8)
    assert np.array_equal(hybrid_predict(full, idx, seed=1).data, hybrid_predict(HpqsModel(1.0, q, None), idx, seed=1).data)
    full0 = HpqsModel(0.0, q, c, Postprocessor.identity(), Postprocessor.identity())
    assert np.array_equal(hybrid_predict(full0, idx).data, hybrid_predict(HpqsModel(0.0, None, c), idx).data)
    return "lambda = 1 and lambda = 0 bit-exact"


CHECKS: dict[str, Callable[[np.random.Generator], str]] = {
    "simulator-normalisation": check_norm,
    "parameter-shift": check_parameter_shift,
    "autodiff-gradient": check_autodiff,
    "nqs-distribution": check_nqs,
    "mps-contraction": check_mps,
    "hoeffding-epsilon": check_hoeffding,
    "qpa-qubit-formula": check_qpa_formula,
    "blend-reductions": check_reductions,
}


def run_selftest(seed: int = 0) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS.items():
        try:
            results.append((name, True, fn(np.random.default_rng(seed))))
        except Exception as exc:  # noqa: BLE001 - every failure is reported, none is fatal
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
    return results
