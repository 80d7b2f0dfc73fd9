"""Dense statevector simulation over the gate set {RX, RY, RZ, CNOT}.

Bit convention: basis index ``i`` has qubit 0 as its *most* significant bit,
so on 3 qubits ``|q0 q1 q2> = |1 0 0>`` is index 4.

Simulation is batched: a batch of B parameter rows (and optionally B rows of
encoded inputs) produces a (B, 2**n) complex array.  Gates are applied in
place on a strided view of that array.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_QUBITS = 16
ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("CNOT",)
SHIFT = np.pi / 2


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    control: int | None = None
    slot: int | None = None

    def __repr__(self) -> str:
        if self.kind == "CNOT":
            return f"CNOT({self.control},{self.target})"
        return f"{self.kind}(q{self.target}, slot={self.slot})"


@dataclass
class Circuit:
    """Ordered gate list with parameter slots.

    Slots ``[0, n_inputs)`` are data slots filled from ``inputs`` (angle
    encoding); the remaining slots are trainable and make up the
    ``ParamVector`` passed to :func:`simulate`.
    """

    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    n_inputs: int = 0
    inputs: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        slots = []
        for g in self.gates:
            if g.kind not in GATE_KINDS:
                raise ValueError(f"unsupported gate {g.kind!r}")
            if not 0 <= g.target < self.n_qubits:
                raise ValueError(f"{g}: target outside register of {self.n_qubits} qubits")
            if g.kind == "CNOT":
                if g.control is None or not 0 <= g.control < self.n_qubits:
                    raise ValueError(f"{g}: control outside register of {self.n_qubits} qubits")
                if g.control == g.target:
                    raise ValueError(f"{g}: control equals target")
            else:
                if g.slot is None:
                    raise ValueError(f"{g}: rotation without parameter slot")
                slots.append(g.slot)
        if sorted(slots) != list(range(len(slots))):
            raise ValueError("every parameter slot must be referenced exactly once")
        if not 0 <= self.n_inputs <= len(slots):
            raise ValueError(f"n_inputs={self.n_inputs} exceeds slot count {len(slots)}")
        if self.inputs is not None:
            self.inputs = np.asarray(self.inputs, dtype=np.float64)
            if self.inputs.shape != (self.n_inputs,):
                raise ValueError(f"expected {self.n_inputs} input values, got {self.inputs.shape}")

    @property
    def n_slots(self) -> int:
        return sum(1 for g in self.gates if g.kind != "CNOT")

    @property
    def n_params(self) -> int:
        """Number of trainable slots."""
        return self.n_slots - self.n_inputs

    def bind(self, inputs) -> "Circuit":
        return Circuit(self.n_qubits, list(self.gates), self.n_inputs, inputs)


@dataclass
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise ValueError(
                f"statevector on {self.n_qubits} qubits needs {1 << self.n_qubits} amplitudes, "
                f"got {self.amplitudes.shape}"
            )

    @classmethod
    def zero(cls, n_qubits: int) -> "Statevector":
        amps = np.zeros(1 << n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


@dataclass(frozen=True)
class Observable:
    """Sum of Pauli-Z on ``qubits``, or an explicit eigenvalue table over the basis."""

    n_qubits: int
    qubits: tuple[int, ...] = ()
    eigenvalues: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.eigenvalues is not None and len(self.eigenvalues) != 1 << self.n_qubits:
            raise ValueError(
                f"eigenvalue table needs {1 << self.n_qubits} entries, got {len(self.eigenvalues)}"
            )
        if any(not 0 <= q < self.n_qubits for q in self.qubits):
            raise ValueError(f"observable qubits {self.qubits} outside {self.n_qubits}-qubit register")

    @classmethod
    def z(cls, n_qubits: int, qubits: Iterable[int]) -> "Observable":
        return cls(n_qubits, tuple(qubits))

    @classmethod
    def full_z(cls, n_qubits: int, qubit: int) -> "Observable":
        """Single-qubit Z written out as a full-register eigenvalue table."""
        return cls(n_qubits, eigenvalues=z_table(n_qubits)[:, qubit].copy())


# --------------------------------------------------------------------------
# circuit builders
# --------------------------------------------------------------------------


def build_qt_ansatz(n_qubits: int, layers: int) -> Circuit:
    """Layers of RY on every qubit followed by a CNOT chain (i, i+1)."""
    if n_qubits < 1 or layers < 1:
        raise ValueError("need n_qubits >= 1 and layers >= 1")
    gates: list[Gate] = []
    slot = 0
    for _ in range(layers):
        for q in range(n_qubits):
            gates.append(Gate("RY", q, slot=slot))
            slot += 1
        for q in range(n_qubits - 1):
            gates.append(Gate("CNOT", q + 1, control=q))
    return Circuit(n_qubits, gates)


QML_QUBITS = 4
QML_FEATURES = 16
QML_ENCODING = ("RY", "RZ", "RX", "RY")


def qml_circuit(n_layers: int = 5) -> Circuit:
    """Unbound 4-qubit classifier: 16 angle-encoding slots then the trainable block.

    Each trainable layer is RX and RY on every qubit followed by a CNOT ring,
    i.e. 8 parameters per layer.
    """
    gates: list[Gate] = []
    slot = 0
    for kind in QML_ENCODING:
        for q in range(QML_QUBITS):
            gates.append(Gate(kind, q, slot=slot))
            slot += 1
    for _ in range(n_layers):
        for kind in ("RX", "RY"):
            for q in range(QML_QUBITS):
                gates.append(Gate(kind, q, slot=slot))
                slot += 1
        for q in range(QML_QUBITS):
            gates.append(Gate("CNOT", (q + 1) % QML_QUBITS, control=q))
    return Circuit(QML_QUBITS, gates, n_inputs=QML_FEATURES)


def build_qml_encoder(features, n_layers: int = 5) -> Circuit:
    """Bind 16 features (row-major 4x4 grid) to the classifier's encoding slots."""
    features = np.asarray(features, dtype=np.float64).reshape(-1)
    if features.shape != (QML_FEATURES,):
        raise ValueError(f"QML encoder needs exactly {QML_FEATURES} features, got {features.size}")
    return qml_circuit(n_layers).bind(features)


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------


def _rotate(state: np.ndarray, kind: str, q: int, n: int, angles: np.ndarray) -> None:
    b = state.shape[0]
    v = state.reshape(b, 1 << q, 2, 1 << (n - q - 1))
    half = 0.5 * angles[:, None, None]
    if kind == "RZ":
        v[:, :, 0, :] *= np.exp(-1j * half)
        v[:, :, 1, :] *= np.exp(1j * half)
        return
    c, s = np.cos(half), np.sin(half)
    a0 = v[:, :, 0, :].copy()
    a1 = v[:, :, 1, :]
    if kind == "RY":
        v[:, :, 0, :] = c * a0 - s * a1
        v[:, :, 1, :] = s * a0 + c * a1
    else:  # RX
        v[:, :, 0, :] = c * a0 - 1j * s * a1
        v[:, :, 1, :] = c * a1 - 1j * s * a0


def _cnot(state: np.ndarray, control: int, target: int, n: int) -> None:
    v = state.reshape((state.shape[0],) + (2,) * n)
    index = [slice(None)] * (n + 1)
    index[1 + control] = 1
    sub = v[tuple(index)]
    axis = 1 + target - (1 if target > control else 0)
    sub[...] = np.flip(sub, axis=axis).copy()


def apply_gate(state: np.ndarray, gate: Gate, n: int, angles: np.ndarray | None = None) -> None:
    """Apply ``gate`` in place to a (B, 2**n) batch of amplitudes."""
    if gate.kind == "CNOT":
        _cnot(state, gate.control, gate.target, n)
    else:
        _rotate(state, gate.kind, gate.target, n, angles)


_PAULI_ROT = {1: ("RX", np.pi), 2: ("RY", np.pi), 3: ("RZ", np.pi)}


def apply_pauli(state: np.ndarray, rows: np.ndarray, qubit: int, n: int, which: np.ndarray) -> None:
    """Apply Pauli X/Y/Z (``which`` = 1/2/3, 0 = identity) to selected batch rows.

    Implemented as a pi-rotation, which equals the Pauli up to a global phase.
    """
    for code, (kind, angle) in _PAULI_ROT.items():
        sel = rows[which == code]
        if sel.size == 0:
            continue
        sub = state[sel]
        _rotate(sub, kind, qubit, n, np.full(sel.size, angle))
        state[sel] = sub


GateHook = Callable[[np.ndarray, int, Gate], None]


def _full_params(circuit: Circuit, theta, inputs) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 1:
        theta = theta[None, :]
    if theta.shape[-1] != circuit.n_params:
        raise ValueError(
            f"parameter length mismatch: circuit has {circuit.n_params} trainable slots, "
            f"got {theta.shape[-1]}"
        )
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters must be finite")
    if circuit.n_inputs == 0:
        return theta
    if inputs is None:
        if circuit.inputs is None:
            raise ValueError("circuit has unbound input slots and no inputs were given")
        inputs = circuit.inputs
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.shape[-1] != circuit.n_inputs:
        raise ValueError(f"expected {circuit.n_inputs} inputs per row, got {inputs.shape[-1]}")
    b = max(theta.shape[0], inputs.shape[0])
    theta = np.broadcast_to(theta, (b, theta.shape[1]))
    inputs = np.broadcast_to(inputs, (b, inputs.shape[1]))
    return np.concatenate([inputs, theta], axis=1)


def simulate_batch(circuit: Circuit, theta, inputs=None, hook: GateHook | None = None) -> np.ndarray:
    """Simulate B rows at once; returns a (B, 2**n) complex array.

    ``theta`` is (P,) or (B, P); ``inputs`` is (n_inputs,) or (B, n_inputs).
    ``hook(state, gate_index, gate)`` runs after every gate (noise insertion).
    """
    params = _full_params(circuit, theta, inputs)
    n = circuit.n_qubits
    state = np.zeros((params.shape[0], 1 << n), dtype=np.complex128)
    state[:, 0] = 1.0
    for k, gate in enumerate(circuit.gates):
        angles = None if gate.kind == "CNOT" else params[:, gate.slot]
        apply_gate(state, gate, n, angles)
        if hook is not None:
            hook(state, k, gate)
    return state


def simulate(circuit: Circuit, theta) -> Statevector:
    """Prepare U(theta)|0...0> for a single parameter vector."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ValueError(f"simulate expects a 1-D parameter vector, got shape {theta.shape}")
    return Statevector(circuit.n_qubits, simulate_batch(circuit, theta)[0])


def exact_probabilities(psi: Statevector | np.ndarray) -> np.ndarray:
    amps = psi.amplitudes if isinstance(psi, Statevector) else np.asarray(psi)
    return amps.real**2 + amps.imag**2


def z_table(n_qubits: int) -> np.ndarray:
    """(2**n, n) table of Z eigenvalues; row i, column q is +1 if qubit q of i is 0."""
    idx = np.arange(1 << n_qubits)[:, None]
    bits = (idx >> (n_qubits - 1 - np.arange(n_qubits))[None, :]) & 1
    return 1.0 - 2.0 * bits


def basis_bits(indices, n_qubits: int) -> np.ndarray:
    """Bitstrings (MSB = qubit 0) of basis ``indices`` as a float (len, n) array."""
    idx = np.asarray(indices, dtype=np.int64)[..., None]
    return ((idx >> (n_qubits - 1 - np.arange(n_qubits))) & 1).astype(np.float64)


def z_expectations(probs: np.ndarray, n_qubits: int) -> np.ndarray:
    """Per-qubit <Z_q> from probability rows of shape (..., 2**n)."""
    return probs @ z_table(n_qubits)


def exact_expectation(psi: Statevector, obs: Observable) -> float:
    if obs.n_qubits != psi.n_qubits:
        raise ValueError(f"observable on {obs.n_qubits} qubits, state on {psi.n_qubits}")
    probs = exact_probabilities(psi)
    if obs.eigenvalues is not None:
        return float(probs @ np.asarray(obs.eigenvalues, dtype=np.float64))
    return float(z_expectations(probs, psi.n_qubits)[list(obs.qubits)].sum())


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------


def _takes_branch(fn: Callable) -> bool:
    try:
        params = inspect.signature(fn).parameters
    except (TypeError, ValueError):
        return True
    return "branch" in params or any(p.kind is p.VAR_KEYWORD for p in params.values())


def parameter_shift_grad(
    circuit: Circuit,
    theta,
    readout: Callable[..., float | np.ndarray],
    slots: Sequence[int] | None = None,
) -> np.ndarray:
    """Gradient (or Jacobian) of ``readout`` w.r.t. the trainable slots.

    ``grad_j = [f(theta + pi/2 e_j) - f(theta - pi/2 e_j)] / 2``.  When the
    readout accepts a ``branch`` keyword it receives ``(j, 0)`` for the plus
    shift and ``(j, 1)`` for the minus shift, so stochastic readouts can draw
    an independent stream per evaluation.  Returns shape (P, *readout_shape).
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (circuit.n_params,):
        raise ValueError(f"expected {circuit.n_params} parameters, got shape {theta.shape}")
    rotating = {g.slot - circuit.n_inputs for g in circuit.gates if g.kind in ROTATIONS}
    slots = range(circuit.n_params) if slots is None else slots
    with_branch = _takes_branch(readout)
    rows = []
    for j in slots:
        if j not in rotating:
            raise ValueError(f"slot {j} is not a single-qubit rotation")
        plus, minus = theta.copy(), theta.copy()
        plus[j] += SHIFT
        minus[j] -= SHIFT
        if with_branch:
            fp, fm = readout(plus, branch=(j, 0)), readout(minus, branch=(j, 1))
        else:
            fp, fm = readout(plus), readout(minus)
        rows.append((np.asarray(fp, dtype=np.float64) - np.asarray(fm, dtype=np.float64)) / 2.0)
    return np.stack(rows)
