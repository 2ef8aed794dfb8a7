"""State-vector backend for the simulated devices.

Registers hold pure states with amplitudes shaped ``(2,) * n`` so a single
qubit is one tensor axis. Measurements are projective in the X-Z plane:
angle ``theta`` measures ``cos(theta) Z + sin(theta) X`` and outcome 0 is the
+1 eigenvalue. The backend is the only object that touches amplitudes;
devices reach it through ``MeasurementRequest`` and it checks ownership on
every request.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Set, Tuple

import numpy as np

from src.config import config
from src.errors import (
    CapacityError,
    InputError,
    InvalidProbability,
    NonSignalingViolation,
    ProtocolError,
)
from src.utils.logging_setup import get_logger

logger = get_logger(__name__)

_SQRT2_INV = 1 / math.sqrt(2)
PAULIS = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def basis_vectors(angle: float) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvectors of cos(angle) Z + sin(angle) X for +1 and -1."""
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([c, s], dtype=complex), np.array([-s, c], dtype=complex)


def _apply_single_qubit(state: np.ndarray, matrix: np.ndarray, qubit: int) -> np.ndarray:
    moved = np.tensordot(matrix, state, axes=([1], [qubit]))
    return np.moveaxis(moved, 0, qubit)


@dataclass
class QuantumRegister:
    """A pure state over a few qubits, each owned by exactly one device."""

    handle: int
    amplitudes: np.ndarray
    owners: Tuple[str, ...]
    consumed: Set[int] = field(default_factory=set)

    @property
    def num_qubits(self) -> int:
        return len(self.owners)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def ownership_map(self) -> Dict[int, str]:
        return dict(enumerate(self.owners))

    def state_vector(self) -> np.ndarray:
        return self.amplitudes.reshape(-1).copy()


@dataclass(frozen=True)
class MeasurementRequest:
    register: int
    qubit: int
    angle: float
    requester: str


class QuantumBackend:
    """Owns every register and linearizes access to them."""

    def __init__(
        self,
        max_qubits: Optional[int] = None,
        retain_consumed: bool = False,
        tolerance: Optional[float] = None,
    ):
        """
        Args:
            max_qubits: Qubits allowed per register (defaults to config)
            retain_consumed: Keep registers after every qubit is measured
            tolerance: Norm tolerance for allocated states
        """
        self.max_qubits = max_qubits or config.max_qubits
        self.retain_consumed = retain_consumed
        self.tolerance = tolerance or config.tolerance
        self.registers: Dict[int, QuantumRegister] = {}
        self._next_handle = 0
        self.measurement_count = 0

    def _add(self, amplitudes: np.ndarray, owners: Sequence[str]) -> int:
        handle = self._next_handle
        self._next_handle += 1
        self.registers[handle] = QuantumRegister(handle, amplitudes, tuple(owners))
        return handle

    def _check_capacity(self, num_qubits: int) -> None:
        if num_qubits > self.max_qubits:
            raise CapacityError(f"Register of {num_qubits} qubits exceeds the cap of {self.max_qubits}")

    def allocate_epr_pairs(self, count: int, owner_a: str, owner_b: str) -> int:
        """
        Allocate ``count`` EPR pairs in one register.

        Qubits are ordered pair by pair: qubit 2k belongs to owner_a and
        qubit 2k+1 to owner_b.

        Returns:
            Register handle
        """
        if count < 1:
            raise InputError(f"EPR allocation needs count >= 1, got {count}")
        self._check_capacity(2 * count)
        pair = np.array([_SQRT2_INV, 0, 0, _SQRT2_INV], dtype=complex)
        state = pair
        for _ in range(count - 1):
            state = np.kron(state, pair)
        return self._add(state.reshape((2,) * (2 * count)), (owner_a, owner_b) * count)

    def allocate_ghz(self, owners: Sequence[str]) -> int:
        """(|0...0> + |1...1>)/sqrt(2) with qubit i owned by owners[i]."""
        n = len(owners)
        if n < 2:
            raise InputError("GHZ allocation needs at least two owners")
        self._check_capacity(n)
        state = np.zeros((2,) * n, dtype=complex)
        state[(0,) * n] = _SQRT2_INV
        state[(1,) * n] = _SQRT2_INV
        return self._add(state, owners)

    def allocate_state(self, vector: Sequence[complex], owners: Sequence[str]) -> int:
        """Allocate an arbitrary normalized state vector."""
        n = len(owners)
        self._check_capacity(n)
        state = np.asarray(vector, dtype=complex)
        if state.size != 2 ** n:
            raise InputError(f"State of size {state.size} does not match {n} qubits")
        if abs(np.vdot(state, state).real - 1.0) > self.tolerance:
            raise InputError("State vector is not normalized")
        return self._add(state.reshape((2,) * n), owners)

    def register(self, handle: int) -> QuantumRegister:
        if handle not in self.registers:
            raise ProtocolError(f"Register {handle} does not exist or was released")
        return self.registers[handle]

    def release(self, handle: int) -> None:
        self.registers.pop(handle, None)

    def measure(self, request: MeasurementRequest, rng: np.random.Generator) -> int:
        """
        Projective measurement of one qubit at ``request.angle``.

        Args:
            request: Register, qubit, angle and requesting device
            rng: The requester's measurement stream

        Returns:
            Outcome bit (0 for the +1 eigenvalue)

        Raises:
            NonSignalingViolation: requester does not own the qubit
            ProtocolError: qubit already measured
        """
        reg = self.register(request.register)
        q = request.qubit
        if not 0 <= q < reg.num_qubits:
            raise InputError(f"Qubit {q} outside register of {reg.num_qubits}")
        if reg.owners[q] != request.requester:
            logger.error(
                f"{request.requester} tried to measure qubit {q} of register {reg.handle} owned by {reg.owners[q]}"
            )
            raise NonSignalingViolation(
                f"{request.requester} does not own qubit {q} of register {reg.handle}"
            )
        if q in reg.consumed:
            raise ProtocolError(f"Qubit {q} of register {reg.handle} was already measured")

        v0, v1 = basis_vectors(request.angle)
        branch1 = np.tensordot(v1.conj(), reg.amplitudes, axes=([0], [q]))
        p1 = float(np.sum(np.abs(branch1) ** 2))
        outcome = 1 if rng.random() < p1 else 0
        if outcome == 1:
            rest, vec, prob = branch1, v1, p1
        else:
            rest = np.tensordot(v0.conj(), reg.amplitudes, axes=([0], [q]))
            vec, prob = v0, 1.0 - p1
        rest = rest / math.sqrt(max(prob, 1e-300))
        reg.amplitudes = np.moveaxis(np.multiply.outer(vec, rest), 0, q)
        reg.consumed.add(q)
        self.measurement_count += 1

        if len(reg.consumed) == reg.num_qubits and not self.retain_consumed:
            self.release(reg.handle)
        return outcome

    def depolarize(self, handle: int, qubit: int, p: float, rng: np.random.Generator) -> int:
        """
        With probability p apply a uniformly random Pauli (I, X, Y or Z).

        Args:
            handle: Register handle
            qubit: Qubit index
            p: Noise probability
            rng: The device's noise stream; p = 0 draws nothing from it

        Returns:
            Index of the applied Pauli, 0 when nothing fired
        """
        if not 0.0 <= p <= 1.0:
            raise InvalidProbability(f"depolarizing probability must lie in [0, 1], got {p}")
        if p == 0.0:
            return 0
        reg = self.register(handle)
        if rng.random() >= p:
            return 0
        which = int(rng.integers(4))
        if which:
            reg.amplitudes = _apply_single_qubit(reg.amplitudes, PAULIS[which], qubit)
        return which
