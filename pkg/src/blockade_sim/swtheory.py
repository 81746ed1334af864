"""Perturbative (Schrieffer-Wolff) description of T0 blockade lifting.

The singlet block of the Hamiltonian is diagonalised exactly by ``U``; the
remaining coupling of T0 to the two singlet eigenstates is then removed to
first order by the anti-Hermitian generator ``S``.  With the sign convention
used here the block-diagonal frame is ``exp(S) H' exp(-S)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .qmodel import T0, ChannelKind, NoiseChannel, SystemParams, build_hamiltonian, build_jump_operator

VALIDITY_WINDOW = (1e-2, 2.0)
PARITY_DECAYS = 3.0
SINGLET_TRIPLET_DECAYS = 0.05
SMALL_ANGLE = 0.1
MIN_GAP_RATIO = 100.0


class PerturbationError(ValueError):
    pass


class Validity(str, enum.Enum):
    VALID = "valid"
    BELOW_WINDOW = "below_window"
    ABOVE_WINDOW = "above_window"


class Regime(str, enum.Enum):
    PARITY = "parity"
    SINGLET_TRIPLET = "singlet_triplet"
    TRANSITION = "transition"


@dataclass(frozen=True)
class SWTransform:
    u_matrix: np.ndarray
    h_prime: np.ndarray
    delta_antisym: float
    delta_sym: float
    s_generator: np.ndarray
    energies: tuple


def exchange_j(p: SystemParams) -> float:
    """Gap between the S(1,1)-like eigenstate and T0 at zero Zeeman difference, GHz."""
    eps, t = p.detuning_eps, p.tunnel_t
    return 2.0 * t * t / (math.sqrt(eps * eps + 4.0 * t * t) + eps)


def singlet_energies(p: SystemParams):
    """(upper, lower) eigenvalues of the singlet block, -eps/2 +- sqrt(eps^2/4 + t^2)."""
    eps, t = p.detuning_eps, p.tunnel_t
    root = math.sqrt(eps * eps / 4.0 + t * t)
    return exchange_j(p), -eps / 2.0 - root


def sw_deltas(p: SystemParams):
    """Couplings of T0 to the antisymmetric (S(1,1)-like) and symmetric singlets."""
    eps, t, dez = p.detuning_eps, p.tunnel_t, p.delta_ez
    r = math.sqrt(4.0 * t * t + eps * eps)
    # cancellation-free rearrangements of the textbook expressions
    d_anti = dez * math.sqrt((eps + r) / (2.0 * r))
    d_sym = -dez * math.sqrt(2.0) * t / math.sqrt(r * (eps + r))
    return d_anti, d_sym


def singlet_rotation(p: SystemParams) -> np.ndarray:
    """Real orthogonal U whose columns are the upper and lower singlet eigenvectors, then T0."""
    eps, t = p.detuning_eps, p.tunnel_t
    r = math.sqrt(4.0 * t * t + eps * eps)
    small = math.sqrt(2.0) * t / math.sqrt(r * (r + eps))
    large = math.sqrt((r + eps) / (2.0 * r))
    return np.array(
        [[small, large, 0.0],
         [large, -small, 0.0],
         [0.0, 0.0, 1.0]],
        dtype=complex,
    )


def build_sw(p: SystemParams, *, min_gap_ratio: float = MIN_GAP_RATIO) -> SWTransform:
    """Rotation, transformed Hamiltonian and first-order generator.

    A singlet level whose gap to T0 is smaller than its coupling divided by
    ``min_gap_ratio`` is rejected; ``min_gap_ratio=0`` disables the check.
    """
    if p.tunnel_t <= 0:
        raise PerturbationError("tunnel coupling must be > 0")
    u = singlet_rotation(p)
    h_prime = u.conj().T @ build_hamiltonian(p) @ u
    d_anti, d_sym = sw_deltas(p)
    e_up, e_down = singlet_energies(p)
    s = np.zeros((3, 3), dtype=complex)
    for i, (energy, delta) in enumerate(((e_up, d_anti), (e_down, d_sym))):
        gap = energy - 0.0
        if min_gap_ratio > 0 and delta != 0 and abs(gap) * min_gap_ratio < abs(delta):
            raise PerturbationError(
                f"singlet level {i} is within {abs(gap):.3g} GHz of T0 but coupled by "
                f"{abs(delta):.3g} GHz; first-order elimination is not valid")
        s[i, T0] = h_prime[i, T0] / gap
        s[T0, i] = -np.conj(s[i, T0])
    return SWTransform(u, h_prime, d_anti, d_sym, s, (e_up, e_down, 0.0))


def effective_hamiltonian(sw: SWTransform) -> np.ndarray:
    """exp(S) H' exp(-S); its T0 row is decoupled up to second order in the couplings."""
    return expm(sw.s_generator) @ sw.h_prime @ expm(-sw.s_generator)


def transform_jump_operator(sw: SWTransform, a) -> np.ndarray:
    """The jump operator expressed in the perturbatively diagonal frame."""
    a = np.asarray(a, dtype=complex)
    s = sw.s_generator
    return expm(s) @ sw.u_matrix.conj().T @ a @ sw.u_matrix @ expm(-s)


def gamma_transformed_channel(p: SystemParams, c: NoiseChannel) -> float:
    """Damping coefficient of rho_T0 produced by the transformed dissipator.

    In the dressed frame the dissipator contributes
    ``-sum_{k != T0} |a'_{k,T0}|^2 rho_T0`` to d rho_T0 / dt.
    """
    if p.delta_ez == 0:
        return 0.0
    a_prime = transform_jump_operator(build_sw(p), build_jump_operator(c))
    column = np.delete(a_prime[:, T0], T0)
    return float(np.sum(np.abs(column) ** 2))


def sine_argument(p: SystemParams) -> float:
    eps, t = p.detuning_eps, p.tunnel_t
    return p.delta_ez * math.sqrt(t * t + eps * eps) / (t * t)


def gamma_dephasing_full(p: SystemParams, t2: float) -> float:
    eps, t = p.detuning_eps, p.tunnel_t
    return 2.0 * t * t / (t2 * eps * eps) * math.sin(sine_argument(p)) ** 2


def gamma_dephasing_limit(p: SystemParams, t2: float) -> float:
    eps, t, dez = p.detuning_eps, p.tunnel_t, p.delta_ez
    return 2.0 * dez * dez / t2 * (t * t + eps * eps) / (t * t * eps * eps)


def gamma_relaxation_limit(p: SystemParams, t1: float) -> float:
    eps, t, dez = p.detuning_eps, p.tunnel_t, p.delta_ez
    return 2.0 * dez * dez / t1 * (t * t + eps * eps) / t ** 4


def gamma_analytic(p: SystemParams, c: NoiseChannel, form: str = "auto") -> float:
    """Closed-form blockade-lifting rate (1/ns).

    ``form`` is ``"full"`` (sine-squared, dephasing only), ``"limit"``
    (quadratic in the Zeeman difference) or ``"auto"``, which uses the
    quadratic form once the sine argument drops below 0.1 rad.
    """
    if p.tunnel_t <= 0:
        raise ValueError("tunnel coupling must be > 0")
    if form not in ("auto", "full", "limit"):
        raise ValueError(f"unknown form {form!r}")
    if p.delta_ez == 0:
        return 0.0
    if c.kind is ChannelKind.RELAXATION:
        if form == "full":
            raise ValueError("only the quadratic form exists for the relaxation channel")
        return gamma_relaxation_limit(p, c.time_constant)
    if form == "limit" or (form == "auto" and sine_argument(p) < SMALL_ANGLE):
        return gamma_dephasing_limit(p, c.time_constant)
    return gamma_dephasing_full(p, c.time_constant)


def validity(ratio: float) -> Validity:
    lo, hi = VALIDITY_WINDOW
    if ratio < lo:
        return Validity.BELOW_WINDOW
    if ratio > hi:
        return Validity.ABOVE_WINDOW
    return Validity.VALID


@dataclass(frozen=True)
class RegimeReport:
    j_split: float
    ratio: float
    validity: Validity
    regime: Regime
    gamma: float
    gamma_source: str
    wait_time: float

    @property
    def decays_during_wait(self) -> float:
        return self.gamma * self.wait_time


def regime_from_rate(gamma: float, wait_time: float) -> Regime:
    n = gamma * wait_time
    if n >= PARITY_DECAYS:
        return Regime.PARITY
    if n <= SINGLET_TRIPLET_DECAYS:
        return Regime.SINGLET_TRIPLET
    return Regime.TRANSITION


def classify_regime(p: SystemParams, c: NoiseChannel, wait_time: float, *,
                    numeric_fallback: bool = True, **rate_kwargs) -> RegimeReport:
    """Readout regime after ``wait_time`` ns at the readout point.

    Inside the validity window the closed-form rate is used; outside it the
    rate comes from simulation (or from the closed form, flagged, when
    ``numeric_fallback`` is off).
    """
    if not wait_time > 0:
        raise ValueError("wait_time must be > 0")
    j = exchange_j(p)
    ratio = p.delta_ez / j if j > 0 else (math.inf if p.delta_ez > 0 else 0.0)
    flag = validity(ratio)
    if p.delta_ez == 0:
        gamma, source = 0.0, "exact"
    elif flag is Validity.VALID or not numeric_fallback:
        gamma, source = gamma_analytic(p, c), "analytic"
    else:
        from .ratefit import numeric_gamma

        gamma, source = numeric_gamma(p, c, **rate_kwargs), "numeric"
    return RegimeReport(j, ratio, flag, regime_from_rate(gamma, wait_time), gamma, source, wait_time)


class ThresholdError(ValueError):
    """No finite tunnel-coupling threshold; ``reason`` says which way it fails."""

    def __init__(self, message, reason):
        super().__init__(message)
        self.reason = reason


def max_tunnel_for_parity(delta_ez: float, eps: float, t2: float, wait_time: float) -> float:
    """Largest tunnel coupling (GHz) whose quadratic dephasing rate still reaches 1/wait_time.

    Solves ``2 dEz^2 (1/t^2 + 1/eps^2) / T2 = 1/wait_time`` for ``t``.
    """
    if not (eps > 0 and t2 > 0 and wait_time > 0) or delta_ez < 0:
        raise ValueError("need eps, t2, wait_time > 0 and delta_ez >= 0")
    if delta_ez == 0:
        raise ThresholdError("no Zeeman difference: T0 never unblocks, parity readout is "
                             "unreachable at any tunnel coupling", "no_mixing")
    k = t2 / (wait_time * 2.0 * delta_ez * delta_ez)
    excess = k - 1.0 / (eps * eps)
    if excess <= 0:
        raise ThresholdError("detuning term alone exceeds 1/wait_time: every tunnel coupling "
                             "gives parity readout, no finite threshold", "unbounded")
    return 1.0 / math.sqrt(excess)


#: Tunnel thresholds quoted for two reference devices (dEz in GHz -> t in GHz).
PUBLISHED_THRESHOLDS = {0.017: 17.0, 0.00041: 0.14}


@dataclass(frozen=True)
class ThresholdReport:
    delta_ez: float
    threshold: float | None
    reason: str
    published: float | None
    annotation: str


def threshold_report(delta_ez, eps, t2, wait_time, rel_tol=0.05) -> ThresholdReport:
    """Threshold plus a comparison against the published reference values."""
    try:
        value, reason = max_tunnel_for_parity(delta_ez, eps, t2, wait_time), "ok"
    except ThresholdError as exc:
        value, reason = None, exc.reason
    published = next((v for d, v in PUBLISHED_THRESHOLDS.items()
                      if math.isclose(d, delta_ez, rel_tol=1e-6)), None)
    note = ""
    if published is not None and value is not None:
        if abs(value - published) <= rel_tol * published:
            note = "matches-published"
        else:
            note = f"published-discrepancy: published {published:g} GHz, computed {value:.4g} GHz"
    return ThresholdReport(delta_ez, value, reason, published, note)
