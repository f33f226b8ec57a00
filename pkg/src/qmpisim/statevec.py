"""Dense state-vector engine.

Qubit ``k`` is bit ``k`` of the basis label (little-endian), so the basis
state ``|i_{n-1} ... i_0>`` has amplitude index ``i``.  Two-qubit gate
matrices use the first listed target as the more significant bit, e.g.
``CNOT`` on ``(control, target)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import AllocationError, DeallocationError, DimensionError, GateError

NORM_TOL = 1e-10
FREE_TOL = 1e-9
DEFAULT_MAX_QUBITS = 24

_SQ2 = 1.0 / np.sqrt(2.0)
_MATRICES = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _SQ2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
    "T": np.array([[1, 0], [0, np.exp(0.25j * np.pi)]], dtype=complex),
    "TDG": np.array([[1, 0], [0, np.exp(-0.25j * np.pi)]], dtype=complex),
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
}
_ARITY = {"CNOT": 2, "CZ": 2}
_INVERSE = {"S": "SDG", "SDG": "S", "T": "TDG", "TDG": "T"}
ROTATIONS = frozenset({"RX", "RZ", "T", "TDG"})


def default_max_qubits() -> int:
    """The qubit cap, overridable through ``QMPI_SIM_MAX_QUBITS``."""
    value = os.environ.get("QMPI_SIM_MAX_QUBITS")
    return int(value) if value else DEFAULT_MAX_QUBITS


@dataclass(frozen=True)
class Gate:
    name: str
    theta: Optional[float] = None

    def __post_init__(self):
        if self.name in ("RX", "RZ"):
            if self.theta is None or not np.isfinite(self.theta):
                raise GateError(f"{self.name} needs a finite angle, got {self.theta!r}")
        elif self.name not in _MATRICES:
            raise GateError(f"unknown gate {self.name!r}")

    @property
    def arity(self) -> int:
        return _ARITY.get(self.name, 1)

    @property
    def is_rotation(self) -> bool:
        return self.name in ROTATIONS

    @property
    def matrix(self) -> np.ndarray:
        if self.name == "RX":
            c, s = np.cos(self.theta / 2), np.sin(self.theta / 2)
            return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
        if self.name == "RZ":
            return np.diag([np.exp(-0.5j * self.theta), np.exp(0.5j * self.theta)])
        return _MATRICES[self.name]

    def inverse(self) -> "Gate":
        if self.theta is not None:
            return Gate(self.name, -self.theta)
        return Gate(_INVERSE.get(self.name, self.name))

    def __str__(self):
        return self.name if self.theta is None else f"{self.name}({self.theta:g})"


H = Gate("H")
X = Gate("X")
Y = Gate("Y")
Z = Gate("Z")
S = Gate("S")
T = Gate("T")
CNOT = Gate("CNOT")
CZ = Gate("CZ")


def Rx(theta: float) -> Gate:
    return Gate("RX", float(theta))


def Rz(theta: float) -> Gate:
    return Gate("RZ", float(theta))


class StateVector:
    """Pure state of ``num_qubits`` qubits held as a complex128 array."""

    def __init__(self, num_qubits: int = 0, max_qubits: Optional[int] = None):
        self.max_qubits = default_max_qubits() if max_qubits is None else max_qubits
        if num_qubits > self.max_qubits:
            raise AllocationError(f"{num_qubits} qubits exceed the cap of {self.max_qubits}")
        self.amps = np.zeros(1 << num_qubits, dtype=complex)
        self.amps[0] = 1.0

    @classmethod
    def from_amplitudes(cls, amps, max_qubits: Optional[int] = None) -> "StateVector":
        amps = np.asarray(amps, dtype=complex).ravel()
        n = int(amps.size).bit_length() - 1
        if amps.size != 1 << n:
            raise DimensionError(f"length {amps.size} is not a power of two")
        if not np.all(np.isfinite(amps)):
            raise DimensionError("amplitudes must be finite")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise DimensionError(f"amplitudes are not normalized (norm {norm})")
        sv = cls(0, max_qubits)
        if n > sv.max_qubits:
            raise AllocationError(f"{n} qubits exceed the cap of {sv.max_qubits}")
        sv.amps = amps.copy()
        return sv

    @property
    def num_qubits(self) -> int:
        return self.amps.size.bit_length() - 1

    def copy(self) -> "StateVector":
        other = StateVector(0, self.max_qubits)
        other.amps = self.amps.copy()
        return other

    def norm(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def _check_qubit(self, q: int):
        if not 0 <= q < self.num_qubits:
            raise GateError(f"qubit {q} out of range for {self.num_qubits} qubits")

    def alloc_qubits(self, n: int) -> list[int]:
        """Append ``n`` qubits in |0> as the new most-significant bits."""
        if n < 1:
            raise AllocationError(f"must allocate at least one qubit, got {n}")
        old = self.num_qubits
        if old + n > self.max_qubits:
            raise AllocationError(
                f"allocating {n} qubits would exceed the cap of {self.max_qubits} (have {old})"
            )
        amps = np.zeros(1 << (old + n), dtype=complex)
        amps[: 1 << old] = self.amps
        self.amps = amps
        return list(range(old, old + n))

    def free_qubits(self, indices: Iterable[int]) -> "StateVector":
        """Remove qubits that are in |0>; the others keep their relative order."""
        indices = sorted(set(indices), reverse=True)
        for q in indices:
            self._check_qubit(q)
        n = self.num_qubits
        psi = self.amps.reshape([2] * n) if n else self.amps
        for q in indices:
            leak = np.take(psi, 1, axis=n - 1 - q)
            if np.max(np.abs(leak), initial=0.0) >= FREE_TOL:
                raise DeallocationError(f"qubit {q} is not in |0> (missing uncompute?)")
        for q in indices:
            psi = np.take(psi, 0, axis=psi.ndim - 1 - q)
        amps = np.ascontiguousarray(psi).reshape(-1).astype(complex)
        norm = np.linalg.norm(amps)
        self.amps = amps / norm
        return self

    def apply_gate(self, gate: Gate, targets: Sequence[int]) -> "StateVector":
        targets = list(targets)
        if len(targets) != gate.arity:
            raise GateError(f"{gate} acts on {gate.arity} qubit(s), got {len(targets)}")
        if len(set(targets)) != len(targets):
            raise GateError(f"repeated target in {targets}")
        for q in targets:
            self._check_qubit(q)
        self.apply_matrix(gate.matrix, targets)
        return self

    def apply_matrix(self, matrix: np.ndarray, targets: Sequence[int]) -> "StateVector":
        n = self.num_qubits
        k = len(targets)
        axes = [n - 1 - q for q in targets]
        psi = self.amps.reshape([2] * n)
        u = np.asarray(matrix, dtype=complex).reshape([2] * (2 * k))
        out = np.tensordot(u, psi, axes=(list(range(k, 2 * k)), axes))
        out = np.moveaxis(out, list(range(k)), axes)
        self.amps = np.ascontiguousarray(out).reshape(-1)
        return self

    def probability_one(self, qubit: int) -> float:
        self._check_qubit(qubit)
        psi = self.amps.reshape(-1, 2, 1 << qubit)
        return float(np.sum(np.abs(psi[:, 1, :]) ** 2))

    def measure(self, qubit: int, rng: np.random.Generator) -> int:
        """Born-rule Z measurement; the state is projected and renormalized."""
        p1 = min(max(self.probability_one(qubit), 0.0), 1.0)
        bit = int(rng.random() < p1)
        psi = self.amps.reshape(-1, 2, 1 << qubit)
        psi[:, 1 - bit, :] = 0.0
        self.amps /= np.sqrt(p1 if bit else 1.0 - p1)
        return bit

    def phase_multi_z(self, t: float, qubits: Sequence[int]) -> "StateVector":
        """Multiply each amplitude by exp(-i t (-1)^parity) over ``qubits``."""
        qubits = list(qubits)
        if len(set(qubits)) != len(qubits):
            raise GateError(f"repeated qubit in {qubits}")
        for q in qubits:
            self._check_qubit(q)
        idx = np.arange(self.amps.size)
        parity = np.zeros(self.amps.size, dtype=np.int64)
        for q in qubits:
            parity ^= (idx >> q) & 1
        self.amps *= np.exp(-1j * t * (1 - 2 * parity))
        return self

    def __len__(self):
        return self.amps.size

    def __repr__(self):
        return f"StateVector(num_qubits={self.num_qubits})"


def apply_exp_multi_z_oracle(state: StateVector, t: float, qubits: Sequence[int]) -> StateVector:
    """Diagonal reference for exp(-i t Z_{q1} ... Z_{qk}); mutates ``state``."""
    return state.phase_multi_z(t, qubits)


def fidelity(a, b) -> float:
    """|<a|b>|^2 for two states (StateVector or raw amplitude arrays)."""
    va = a.amps if isinstance(a, StateVector) else np.asarray(a, dtype=complex)
    vb = b.amps if isinstance(b, StateVector) else np.asarray(b, dtype=complex)
    if va.shape != vb.shape:
        raise DimensionError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    return float(min(abs(np.vdot(va, vb)) ** 2, 1.0))


def random_state(num_qubits: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random amplitudes (normalized complex Gaussian vector)."""
    v = rng.normal(size=1 << num_qubits) + 1j * rng.normal(size=1 << num_qubits)
    return v / np.linalg.norm(v)
