"""Lindblad propagation of the three-level readout model.

Density matrices are vectorized row-major (``rho.reshape(-1)``), so that
``vec(A @ rho @ B) == kron(A, B.T) @ vec(rho)``.

Two propagators are provided and must agree with each other:

* ``method="expm"`` steps the exact propagator ``expm(L * dt)`` between
  sample times, in the real coordinates of an orthonormal Hermitian operator
  basis with the identity coefficient held fixed (trace and Hermiticity are
  exact by construction).  Cost depends on the number of samples only, which
  makes horizons of 1e6 ns (and rates down to 1e-9 / ns) affordable.
* ``method="rk45"`` is an adaptive Dormand-Prince 5(4) integrator.  It has
  to resolve the detuning oscillation (~1e2 GHz), so it is only practical
  for horizons up to a few thousand ns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .qmodel import (
    T0,
    DensityMatrix,
    NoiseChannel,
    SystemParams,
    build_hamiltonian,
    build_jump_operator,
)

_DIM = 3


class IntegrationError(RuntimeError):
    """Propagation failed; ``t_reached`` is the last time successfully integrated."""

    def __init__(self, message, t_reached):
        super().__init__(f"{message} (reached t = {t_reached:.6g} ns)")
        self.t_reached = t_reached


class DegenerateSteadyStateError(ValueError):
    """The Liouvillian has more than one stationary state.

    ``basis`` holds the stationary density matrices spanning the null space
    (trace-normalised where possible); pass ``reference=`` to
    :func:`steady_state` to select one.
    """

    def __init__(self, basis):
        super().__init__(f"stationary subspace has dimension {len(basis)}")
        self.basis = basis


@dataclass(frozen=True)
class PropagationConfig:
    t_end: float
    dt_max: float | None = None
    rtol: float = 1e-8
    atol: float = 1e-10
    sample_every: float | None = None
    method: str = "expm"
    max_samples: int = 200_000
    times: tuple | None = None
    keep_states: bool = False

    def __post_init__(self):
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError("t_end must be a positive finite time")
        if self.dt_max is not None and not 0 < self.dt_max < self.t_end:
            raise ValueError("need 0 < dt_max < t_end")
        for name in ("rtol", "atol"):
            tol = getattr(self, name)
            if not 0 < tol <= 1e-2:
                raise ValueError(f"{name} must lie in (0, 1e-2]")
        if self.sample_every is not None and self.sample_every <= 0:
            raise ValueError("sample_every must be > 0")
        if self.method not in ("expm", "rk45"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_samples < 2:
            raise ValueError("max_samples must be >= 2")
        if self.times is not None:
            times = np.asarray(self.times, dtype=float)
            if times.ndim != 1 or times.size < 1 or times[0] < 0 or np.any(np.diff(times) <= 0):
                raise ValueError("times must be non-negative and strictly increasing")
            if times[-1] > self.t_end * (1 + 1e-12):
                raise ValueError("times exceed t_end")
            object.__setattr__(self, "times", tuple(times.tolist()))


@dataclass(frozen=True)
class TimeTrace:
    """Sampled populations; ``populations[k, i]`` is p_i(times[k])."""

    times: np.ndarray
    populations: np.ndarray
    final_state: DensityMatrix
    states: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        pops = np.asarray(self.populations, dtype=float)
        if times.ndim != 1 or np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if pops.shape != (times.size, _DIM):
            raise ValueError(f"populations shape {pops.shape} does not match times")
        if pops.min() < -1e-9 or pops.max() > 1 + 1e-9:
            raise ValueError("population outside [0, 1]")
        if np.max(np.abs(pops.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("populations do not sum to one")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "populations", pops)

    def __len__(self):
        return self.times.size

    def population(self, index: int) -> np.ndarray:
        return self.populations[:, index]


def liouvillian(hamiltonian, jump_ops=()) -> np.ndarray:
    """Row-major vectorized generator of d rho/dt = -i[H, rho] + sum_k D[a_k](rho)."""
    h = np.asarray(hamiltonian, dtype=complex)
    n = h.shape[0]
    eye = np.eye(n)
    gen = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for a in jump_ops:
        a = np.asarray(a, dtype=complex)
        ada = a.conj().T @ a
        gen += np.kron(a, a.conj()) - 0.5 * (np.kron(ada, eye) + np.kron(eye, ada.T))
    return gen


def model_liouvillian(p: SystemParams, c: NoiseChannel | None) -> np.ndarray:
    jumps = () if c is None else (build_jump_operator(c),)
    return liouvillian(build_hamiltonian(p), jumps)


def dissipator(a, rho) -> np.ndarray:
    """a rho a^dag - (a^dag a rho + rho a^dag a) / 2."""
    a = np.asarray(a, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    if a.shape != rho.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: jump {a.shape} vs state {rho.shape}")
    ad = a.conj().T
    ada = ad @ a
    return a @ rho @ ad - 0.5 * (ada @ rho + rho @ ada)


def lindblad_rhs(hamiltonian, a, rho) -> np.ndarray:
    h = np.asarray(hamiltonian, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    out = -1j * (h @ rho - rho @ h)
    if a is not None:
        out = out + dissipator(a, rho)
    return out


def oscillation_frequency(p: SystemParams) -> float:
    """Rough T0-S oscillation frequency sqrt(dEz^2 + J^2), GHz."""
    eps, t = p.detuning_eps, p.tunnel_t
    j = 2 * t * t / (math.sqrt(eps * eps + 4 * t * t) + eps)
    return math.hypot(p.delta_ez, j)


def default_sample_every(p: SystemParams) -> float | None:
    f = oscillation_frequency(p)
    return 1.0 / (20.0 * f) if f > 0 else None


def sample_times(p: SystemParams, cfg: PropagationConfig) -> np.ndarray:
    if cfg.times is not None:
        return np.asarray(cfg.times, dtype=float)
    spacing = cfg.sample_every if cfg.sample_every is not None else default_sample_every(p)
    if spacing is None:
        spacing = cfg.t_end / 1000
    spacing = max(spacing, cfg.t_end / (cfg.max_samples - 1))
    n = max(1, math.ceil(cfg.t_end / spacing - 1e-9))
    return np.linspace(0.0, cfg.t_end, n + 1)


def _check_initial(rho0) -> np.ndarray:
    if rho0 is None:
        return DensityMatrix.basis_state(T0).entries.copy()
    rho = rho0.entries if isinstance(rho0, DensityMatrix) else DensityMatrix(rho0).entries
    if rho.shape != (_DIM, _DIM):
        raise ValueError("initial state must be 3x3")
    return np.array(rho, dtype=complex)


def hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal (Hilbert-Schmidt) Hermitian basis with ``basis[0] = I / sqrt(n)``."""
    basis = [np.eye(n, dtype=complex) / math.sqrt(n)]
    for k in range(1, n):
        d = np.zeros(n)
        d[:k] = 1.0
        d[k] = -k
        basis.append(np.diag(d / math.sqrt(k * (k + 1))).astype(complex))
    for j in range(n):
        for k in range(j + 1, n):
            sym = np.zeros((n, n), dtype=complex)
            sym[j, k] = sym[k, j] = 1 / math.sqrt(2)
            asym = np.zeros((n, n), dtype=complex)
            asym[j, k] = -1j / math.sqrt(2)
            asym[k, j] = 1j / math.sqrt(2)
            basis.extend((sym, asym))
    return np.array(basis)


_BASIS = hermitian_basis(_DIM)
# vec(B_k) as columns; coordinates x_k = Tr(B_k rho) are real for Hermitian rho
_BASIS_COLS = _BASIS.reshape(_DIM * _DIM, -1).T
_X0 = 1.0 / math.sqrt(_DIM)


def real_generator(gen: np.ndarray) -> np.ndarray:
    """Real matrix of the superoperator in the Hermitian basis.

    Row 0 (the trace direction) is zeroed: the generator is trace preserving,
    and dropping its rounding noise keeps the propagated trace exactly one.
    """
    g = _BASIS_COLS.conj().T @ gen @ _BASIS_COLS
    g = g.real.copy()
    g[0] = 0.0
    return g


def _to_coords(rho):
    return np.real(_BASIS_COLS.conj().T @ rho.reshape(-1))


def _from_coords(xs):
    return np.einsum("...k,kij->...ij", xs, _BASIS)


def _powers(step, m):
    out = np.empty((m,) + step.shape)
    out[0] = np.eye(step.shape[0])
    for k in range(1, m):
        out[k] = step @ out[k - 1]
    return out


def _expm_uniform(g, x0, dt, n_steps, block=256):
    """Coordinates at k*dt, k = 0..n_steps, by repeated application of expm(g*dt)."""
    step = expm(g * dt)
    m = min(block, n_steps + 1)
    pows = _powers(step, m)
    advance = step @ pows[-1]
    out = np.empty((n_steps + 1, x0.size))
    x = x0.copy()
    for start in range(0, n_steps + 1, m):
        stop = min(start + m, n_steps + 1)
        out[start:stop] = pows[: stop - start] @ x
        x = advance @ x
        x[0] = _X0
    out[:, 0] = _X0
    return out


def _expm_times(g, x0, times):
    diffs = np.diff(np.concatenate(([0.0], times)))
    if times.size > 2 and np.allclose(diffs[1:], diffs[1], rtol=1e-12, atol=0):
        # uniform grid after the first sample
        head = expm(g * diffs[0]) @ x0 if diffs[0] > 0 else x0.copy()
        head[0] = _X0
        return _expm_uniform(g, head, diffs[1], times.size - 1)
    out = np.empty((times.size, x0.size))
    cache = {}
    x = x0.copy()
    for k, dt in enumerate(diffs):
        if dt > 0:
            key = float(dt)
            if key not in cache:
                cache[key] = expm(g * dt)
            x = cache[key] @ x
            x[0] = _X0
        out[k] = x
    return out


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_DP_E = _DP_B5 - _DP_B4


def rk45_linear(gen, y0, times, *, rtol=1e-8, atol=1e-10, dt_max=None, h0=None):
    """Adaptive Dormand-Prince integration of dy/dt = gen @ y, sampled at ``times``.

    Steps are clipped to land exactly on every sample time.
    """
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, y0.size), dtype=complex)
    t = 0.0
    y = np.array(y0, dtype=complex)
    k = np.empty((7, y.size), dtype=complex)
    k[0] = gen @ y
    scale_rate = np.linalg.norm(gen, 2)
    h = h0 if h0 is not None else 0.01 / max(scale_rate, 1e-300)
    if dt_max is not None:
        h = min(h, dt_max)
    for idx, target in enumerate(times):
        while target - t > 1e-14 * max(1.0, abs(target)):
            h_try = min(h, target - t)
            if dt_max is not None:
                h_try = min(h_try, dt_max)
            if h_try < 1e-14 * max(1.0, abs(t)):
                raise IntegrationError("step size underflow", t)
            for s in range(1, 7):
                ys = y + h_try * (np.asarray(_DP_A[s]) @ k[:s])
                k[s] = gen @ ys
            y_new = y + h_try * (_DP_B5[:6] @ k[:6])
            err_vec = h_try * (_DP_E @ k)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = math.sqrt(np.mean(np.abs(err_vec / scale) ** 2))
            if not math.isfinite(err):
                raise IntegrationError("non-finite error estimate", t)
            if err <= 1.0:
                t += h_try
                y = y_new
                k[0] = k[6]  # FSAL
                factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                # a step clipped onto a sample time must not shrink the running h
                h = max(h, h_try * factor) if h_try < h else h_try * factor
            else:
                h = h_try * max(0.2, 0.9 * err ** -0.2)
        out[idx] = y
    return out


def _hermitize(states):
    return 0.5 * (states + np.conj(np.swapaxes(states, -1, -2)))


def propagate(p: SystemParams, c: NoiseChannel | None, rho0=None,
              cfg: PropagationConfig | None = None) -> TimeTrace:
    """Integrate the master equation from ``rho0`` (default |T0><T0|).

    ``c=None`` gives purely unitary evolution.  The returned trace carries the
    final density matrix as ``final_state`` (and every sampled state when
    ``cfg.keep_states`` is set).
    """
    if cfg is None:
        raise ValueError("a PropagationConfig is required")
    rho = _check_initial(rho0)
    gen = model_liouvillian(p, c)
    times = sample_times(p, cfg)
    if cfg.method == "expm":
        xs = _expm_times(real_generator(gen), _to_coords(rho), times)
        states = _from_coords(xs)
    else:
        ys = rk45_linear(gen, rho.reshape(-1), times, rtol=cfg.rtol, atol=cfg.atol,
                         dt_max=cfg.dt_max)
        states = ys.reshape(-1, _DIM, _DIM)
    if not np.all(np.isfinite(states)):
        bad = int(np.argmin(np.all(np.isfinite(states), axis=(1, 2))))
        raise IntegrationError("non-finite state", times[max(bad - 1, 0)])
    pops = np.real(np.einsum("kii->ki", states))
    final = DensityMatrix(_hermitize(states[-1]), atol_herm=1e-9, atol_trace=1e-9, atol_psd=1e-8)
    return TimeTrace(times, pops, final, states if cfg.keep_states else None)


def evolve_exact(p: SystemParams, c: NoiseChannel | None, rho0, times) -> np.ndarray:
    """Reference states expm(L t) rho0 evaluated independently at every t."""
    gen = model_liouvillian(p, c)
    y0 = _check_initial(rho0).reshape(-1)
    return np.array([(expm(gen * t) @ y0).reshape(_DIM, _DIM) for t in np.asarray(times, float)])


def unitary_evolution(p: SystemParams, rho0, times) -> np.ndarray:
    """exp(-iHt) rho0 exp(iHt) from the eigendecomposition of H."""
    h = build_hamiltonian(p)
    w, v = np.linalg.eigh(h)
    rho = _check_initial(rho0)
    out = []
    for t in np.asarray(times, dtype=float):
        u = (v * np.exp(-1j * w * t)) @ v.conj().T
        out.append(u @ rho @ u.conj().T)
    return np.array(out)


def slowest_rates(p: SystemParams, c: NoiseChannel, n: int = 3, rel_tol: float = 1e-12) -> np.ndarray:
    """Smallest nonzero decay rates -Re(lambda) of the Liouvillian, ascending."""
    w = np.linalg.eigvals(model_liouvillian(p, c))
    rates = np.sort(-w.real)
    rates = rates[rates > rel_tol * max(np.abs(w).max(), 1e-300)]
    return rates[:n]


def _null_space(gen, tol):
    _, s, vh = np.linalg.svd(gen)
    cutoff = tol * max(s[0], 1e-300)
    return vh[s <= cutoff].conj()


def _as_state(vec):
    m = vec.reshape(_DIM, _DIM)
    tr = np.trace(m)
    if abs(tr) < 1e-12:
        return _hermitize(m)
    return _hermitize(m / tr)


def steady_state(p: SystemParams, c: NoiseChannel, reference=None, tol: float = 1e-10) -> DensityMatrix:
    """Stationary state from the null space of the 9x9 Liouvillian.

    A degenerate null space raises :class:`DegenerateSteadyStateError` unless
    ``reference`` (e.g. a long-time propagated state) is given, in which case
    the reference is projected onto the stationary subspace.
    """
    null = _null_space(model_liouvillian(p, c), tol)
    if null.shape[0] == 1:
        return DensityMatrix(_as_state(null[0]), atol_herm=1e-9, atol_trace=1e-9, atol_psd=1e-8)
    if reference is None:
        raise DegenerateSteadyStateError([_as_state(v) for v in null])
    ref = _check_initial(reference).reshape(-1)
    proj = null.T @ (null.conj() @ ref)
    return DensityMatrix(_as_state(proj), atol_herm=1e-9, atol_trace=1e-9, atol_psd=1e-8)
