"""Physical model of the (1,1)-(0,2) readout pair.

Everything is expressed in plain frequency units with hbar = 1 and no
factor of 2*pi: energies are in GHz, times in ns, rates in 1/ns.

Basis ordering used throughout the package::

    0 -> |S(0,2)>,  1 -> |S(1,1)>,  2 -> |T0(1,1)>
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

#: Bohr magneton over Planck's constant, GHz per tesla (CODATA, 8 s.f.).
MU_B_OVER_H_GHZ_PER_T = 13.996245

S02, S11, T0 = 0, 1, 2
BASIS_LABELS = ("S02", "S11", "T0")

HERMITIAN_ATOL = 1e-12
TRACE_ATOL = 1e-12
PSD_ATOL = 1e-10


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class SystemParams:
    """Detuning, tunnel coupling and Zeeman-energy difference, all in GHz.

    ``tunnel_t = 0`` is accepted so that decoupled limits can be built;
    operations that need a finite coupling check for it themselves.
    """

    detuning_eps: float
    tunnel_t: float
    delta_ez: float = 0.0

    def __post_init__(self):
        eps = _finite("detuning_eps", self.detuning_eps)
        t = _finite("tunnel_t", self.tunnel_t)
        dez = _finite("delta_ez", self.delta_ez)
        if eps <= 0:
            raise ValueError("detuning_eps must be > 0 (readout side of the anticrossing)")
        if t < 0:
            raise ValueError("tunnel_t must be >= 0")
        if dez < 0:
            raise ValueError("delta_ez must be >= 0")
        object.__setattr__(self, "detuning_eps", eps)
        object.__setattr__(self, "tunnel_t", t)
        object.__setattr__(self, "delta_ez", dez)

    def with_delta_ez(self, delta_ez: float) -> "SystemParams":
        return SystemParams(self.detuning_eps, self.tunnel_t, delta_ez)

    def with_tunnel(self, tunnel_t: float) -> "SystemParams":
        return SystemParams(self.detuning_eps, tunnel_t, self.delta_ez)


class ChannelKind(str, enum.Enum):
    DEPHASING = "dephasing"
    RELAXATION = "relaxation"


@dataclass(frozen=True)
class NoiseChannel:
    """A single Markovian charge-noise channel.

    ``time_constant`` is T2 (ns) for dephasing and T1 (ns) for relaxation.
    """

    kind: ChannelKind
    time_constant: float

    def __post_init__(self):
        kind = ChannelKind(self.kind)
        tc = _finite("time_constant", self.time_constant)
        if tc <= 0:
            raise ValueError("time_constant must be > 0")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "time_constant", tc)

    @classmethod
    def dephasing(cls, t2: float) -> "NoiseChannel":
        return cls(ChannelKind.DEPHASING, t2)

    @classmethod
    def relaxation(cls, t1: float) -> "NoiseChannel":
        return cls(ChannelKind.RELAXATION, t1)

    def with_time_constant(self, time_constant: float) -> "NoiseChannel":
        return NoiseChannel(self.kind, time_constant)


@dataclass(frozen=True)
class ZeemanInputs:
    delta_g: float
    b_field: float

    def __post_init__(self):
        _finite("delta_g", self.delta_g)
        if _finite("b_field", self.b_field) < 0:
            raise ValueError("b_field must be >= 0")


class DensityMatrix:
    """Validated density matrix (Hermitian, unit trace, positive semidefinite)."""

    __slots__ = ("_data",)

    def __init__(self, entries, *, atol_herm=HERMITIAN_ATOL, atol_trace=TRACE_ATOL,
                 atol_psd=PSD_ATOL):
        data = np.array(entries, dtype=complex)
        if data.ndim != 2 or data.shape[0] != data.shape[1] or data.shape[0] not in (3, 4):
            raise ValueError(f"expected a 3x3 or 4x4 matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("density matrix has non-finite entries")
        herm_err = np.max(np.abs(data - data.conj().T))
        if herm_err > atol_herm:
            raise ValueError(f"not Hermitian (max deviation {herm_err:.3e})")
        tr = np.trace(data).real
        if abs(tr - 1.0) > atol_trace:
            raise ValueError(f"trace is {tr!r}, expected 1")
        min_eig = np.linalg.eigvalsh(0.5 * (data + data.conj().T)).min()
        if min_eig < -atol_psd:
            raise ValueError(f"not positive semidefinite (min eigenvalue {min_eig:.3e})")
        data.setflags(write=False)
        self._data = data

    @property
    def entries(self) -> np.ndarray:
        return self._data

    @property
    def dim(self) -> int:
        return self._data.shape[0]

    def populations(self) -> np.ndarray:
        return self._data.diagonal().real.copy()

    @classmethod
    def pure(cls, state) -> "DensityMatrix":
        psi = np.asarray(state, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def basis_state(cls, index: int, dim: int = 3) -> "DensityMatrix":
        psi = np.zeros(dim)
        psi[index] = 1.0
        return cls.pure(psi)

    def __array__(self, dtype=None, copy=None):
        return self._data.astype(dtype) if dtype is not None else self._data.copy()

    def __repr__(self):
        return f"DensityMatrix(dim={self.dim})"


def build_hamiltonian(p: SystemParams) -> np.ndarray:
    """Three-level Hamiltonian in the {S(0,2), S(1,1), T0(1,1)} basis (GHz)."""
    eps, t, dez = p.detuning_eps, p.tunnel_t, p.delta_ez
    return np.array(
        [[-eps, t, 0.0],
         [t, 0.0, dez],
         [0.0, dez, 0.0]],
        dtype=complex,
    )


def build_jump_operator(c: NoiseChannel) -> np.ndarray:
    """Jump operator of the charge channel, in units of ns^(-1/2)."""
    a = np.zeros((3, 3), dtype=complex)
    if c.kind is ChannelKind.DEPHASING:
        amp = 1.0 / math.sqrt(2.0 * c.time_constant)
        a[S02, S02] = amp
        a[S11, S11] = -amp
        a[T0, T0] = -amp
    else:
        # S(1,1) -> S(0,2)
        a[S02, S11] = 1.0 / math.sqrt(c.time_constant)
    return a


def zeeman_split(z: ZeemanInputs) -> float:
    """Zeeman-energy difference in GHz from a g-factor difference and a field in tesla."""
    return z.delta_g * MU_B_OVER_H_GHZ_PER_T * z.b_field
