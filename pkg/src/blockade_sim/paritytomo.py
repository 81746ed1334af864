"""Two-qubit state tomography from parity (odd/even) readout.

Basis ordering: |uu>, |ud>, |du>, |dd> (qubit 1 is the left tensor factor).
Qubits in gate sequences are labelled 1 and 2.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
AXES = ("I", "X", "Y", "Z")
#: The 15 measurement settings, in a fixed order.
SETTINGS = tuple((m, n) for m, n in itertools.product(AXES, AXES) if (m, n) != ("I", "I"))


def _axis(name) -> str:
    name = str(name).upper()
    if name not in PAULI:
        raise ValueError(f"unknown axis {name!r}")
    return name


def pauli_product(m, n) -> np.ndarray:
    return np.kron(PAULI[_axis(m)], PAULI[_axis(n)])


def projector(m, n) -> np.ndarray:
    """(I x I - sigma_M x sigma_N) / 2."""
    m, n = _axis(m), _axis(n)
    if m == n == "I":
        raise ValueError("(I, I) is not a measurement setting")
    return 0.5 * (np.eye(4) - pauli_product(m, n))


PARITY_ODD = projector("Z", "Z")


class TwoQubitState:
    """Validated 4x4 density matrix."""

    __slots__ = ("_data",)

    def __init__(self, entries, atol: float = 1e-12, psd_atol: float = 1e-10):
        data = np.array(entries, dtype=complex)
        if data.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {data.shape}")
        if np.max(np.abs(data - data.conj().T)) > atol:
            raise ValueError("state is not Hermitian")
        if abs(np.trace(data).real - 1) > atol:
            raise ValueError("state does not have unit trace")
        if np.linalg.eigvalsh(data).min() < -psd_atol:
            raise ValueError("state is not positive semidefinite")
        data.setflags(write=False)
        self._data = data

    @property
    def entries(self) -> np.ndarray:
        return self._data

    def __array__(self, dtype=None, copy=None):
        return self._data.astype(dtype) if dtype is not None else self._data.copy()


@dataclass(frozen=True)
class Rotation:
    qubit: int
    axis: str
    angle: float

    def matrix(self) -> np.ndarray:
        single = expm(-0.5j * self.angle * PAULI[self.axis])
        return np.kron(single, PAULI["I"]) if self.qubit == 1 else np.kron(PAULI["I"], single)


@dataclass(frozen=True)
class CNOT:
    control: int
    target: int

    def matrix(self) -> np.ndarray:
        up = np.diag([1.0, 0.0]).astype(complex)
        down = np.diag([0.0, 1.0]).astype(complex)
        eye, x = PAULI["I"], PAULI["X"]
        if self.control == 1:
            return np.kron(up, eye) + np.kron(down, x)
        return np.kron(eye, up) + np.kron(x, down)


@dataclass(frozen=True)
class MeasurementSetting:
    m_axis: str
    n_axis: str
    gate_sequence: tuple

    def unitary(self) -> np.ndarray:
        """Product of the gates, first-applied gate rightmost."""
        g = np.eye(4, dtype=complex)
        for gate in self.gate_sequence:
            g = gate.matrix() @ g
        return g

    def conjugation_error(self) -> float:
        g = self.unitary()
        return float(np.max(np.abs(g.conj().T @ PARITY_ODD @ g - projector(self.m_axis, self.n_axis))))


# pre-rotations taking the named axis onto Z: R^dag Z R = sigma_axis
_PRE_ROTATION = {"X": ("Y", -math.pi / 2), "Y": ("X", math.pi / 2)}


def compile_setting(m, n) -> MeasurementSetting:
    """Gates G, applied before the parity readout, with G^dag Pi_ZZ G = Pi_MN.

    A single-qubit setting (one axis is I) is mapped with a CNOT whose control
    is the identity-side qubit and whose target is the measured qubit.
    """
    m, n = _axis(m), _axis(n)
    if m == n == "I":
        raise ValueError("(I, I) is not a measurement setting")
    gates = []
    for qubit, axis in ((1, m), (2, n)):
        if axis in _PRE_ROTATION:
            rot_axis, angle = _PRE_ROTATION[axis]
            gates.append(Rotation(qubit, rot_axis, angle))
    if m == "I":
        gates.append(CNOT(control=1, target=2))
    elif n == "I":
        gates.append(CNOT(control=2, target=1))
    return MeasurementSetting(m, n, tuple(gates))


def _as_matrix(rho) -> np.ndarray:
    return rho.entries if isinstance(rho, TwoQubitState) else np.asarray(rho, dtype=complex)


def exact_probs(rho) -> dict:
    r = _as_matrix(rho)
    return {s: float(np.real(np.trace(projector(*s) @ r))) for s in SETTINGS}


def simulate_probs(rho, shots: int | None = None, seed: int | None = None) -> dict:
    """Odd-parity probability for every setting; sampled frequencies when ``shots`` is set."""
    probs = exact_probs(rho)
    if shots is None:
        return probs
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    means = np.clip([probs[s] for s in SETTINGS], 0.0, 1.0)
    counts = rng.binomial(shots, means)
    return {s: c / shots for s, c in zip(SETTINGS, counts)}


def pauli_coefficients(probs) -> dict:
    """c_MN = Tr[(sigma_M x sigma_N) rho] = 1 - 2 p_MN."""
    return {s: 1.0 - 2.0 * float(probs[s]) for s in SETTINGS}


def linear_inversion(probs) -> np.ndarray:
    """Unconstrained estimate (I + sum c_MN sigma_M x sigma_N) / 4 (may be unphysical)."""
    missing = [s for s in SETTINGS if s not in probs]
    if missing:
        raise ValueError(f"missing settings: {missing}")
    for s in SETTINGS:
        if not 0.0 <= probs[s] <= 1.0:
            raise ValueError(f"probability for {s} outside [0, 1]")
    rho = np.eye(4, dtype=complex)
    for s, coeff in pauli_coefficients(probs).items():
        rho += coeff * pauli_product(*s)
    return rho / 4.0


def project_to_physical(rho) -> np.ndarray:
    """Clip negative eigenvalues to zero and renormalise the trace."""
    r = np.asarray(rho, dtype=complex)
    w, v = np.linalg.eigh(0.5 * (r + r.conj().T))
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.conj().T
    out = 0.5 * (out + out.conj().T)
    return out / np.trace(out).real


def reconstruct(probs) -> TwoQubitState:
    return TwoQubitState(project_to_physical(linear_inversion(probs)))


def trace_distance(a, b) -> float:
    diff = _as_matrix(a) - _as_matrix(b)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    r, s = _as_matrix(rho), _as_matrix(sigma)
    w, v = np.linalg.eigh(r)
    sqrt_r = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    inner = np.linalg.eigvalsh(sqrt_r @ s @ sqrt_r)
    return float(np.sum(np.sqrt(np.clip(inner, 0, None))) ** 2)


def random_state(rng, rank: int = 4) -> TwoQubitState:
    """Random density matrix (Ginibre ensemble of the given rank)."""
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return TwoQubitState(rho / np.trace(rho).real)


def gram_matrix() -> np.ndarray:
    """Hilbert-Schmidt Gram matrix of {I x I} and the 15 projectors."""
    ops = [np.eye(4, dtype=complex)] + [projector(*s) for s in SETTINGS]
    return np.array([[np.trace(a.conj().T @ b) for b in ops] for a in ops])
