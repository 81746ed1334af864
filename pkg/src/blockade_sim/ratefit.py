"""Blockade-lifting rates from simulated traces, and noise-time calibration.

A decay ``A exp(-gamma t) + B`` is fitted either to the local maxima of an
oscillating trace (envelope mode) or to the raw samples (direct mode); the
candidate with the smaller RMS residual wins.
"""
from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize_scalar
from scipy.signal import find_peaks

from .lindblad import PropagationConfig, TimeTrace, propagate, slowest_rates
from .qmodel import T0, ChannelKind, NoiseChannel, SystemParams

OFFSET_SLACK = 1e-6
MIN_SAMPLES = 50
MIN_MAXIMA = 4


class FitMode(str, enum.Enum):
    ENVELOPE = "envelope"
    DIRECT = "direct"


class InsufficientSamplesError(ValueError):
    pass


class FitError(RuntimeError):
    """Least squares did not converge; the last iterate is kept for inspection."""

    def __init__(self, message, last_params, residual_rms):
        super().__init__(f"{message}: last iterate {last_params}, rms {residual_rms:.3e}")
        self.last_params = last_params
        self.residual_rms = residual_rms


@dataclass(frozen=True)
class DecayFit:
    amplitude_A: float
    offset_B: float
    gamma: float
    residual_rms: float
    mode: FitMode
    n_points: int = 0
    spans_decay: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.residual_rms < 0:
            raise ValueError("residual_rms must be >= 0")
        if not -1e-9 <= self.offset_B <= 1 + 1e-9:
            raise ValueError(f"offset_B = {self.offset_B} outside [0, 1]")

    def __call__(self, t):
        return self.amplitude_A * np.exp(-self.gamma * np.asarray(t, dtype=float)) + self.offset_B


@dataclass(frozen=True)
class RateDataPoint:
    delta_ez: float
    gamma_obs: float
    weight: float = 1.0

    def __post_init__(self):
        if self.delta_ez < 0:
            raise ValueError("delta_ez must be >= 0")
        if not self.gamma_obs > 0:
            raise ValueError("gamma_obs must be > 0")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")


def local_maxima(values, rel_prominence: float = 1e-3) -> np.ndarray:
    """Indices of prominent local maxima, including a leading maximum at index 0.

    Maxima whose prominence is below ``rel_prominence`` times the trace's
    peak-to-peak range are dropped (rounding wiggles on a flat tail).
    """
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return np.arange(0)
    floor = max(rel_prominence * float(np.ptp(v)), 1e-12)
    inner, _ = find_peaks(v, prominence=floor)
    if v[0] >= v[1]:
        inner = np.concatenate(([0], inner))
    return inner


def _envelope_usable(t, peaks, coverage):
    if peaks.size < MIN_MAXIMA:
        return False
    return t[peaks[-1]] - t[0] >= coverage * (t[-1] - t[0])


def _initial_guess(t, y):
    tail = max(1, y.size // 20)
    b0 = float(np.mean(y[-tail:]))
    a0 = float(y[0] - b0)
    target = b0 + a0 / math.e
    if a0 > 0:
        crossed = np.flatnonzero(y <= target)
    else:
        crossed = np.flatnonzero(y >= target)
    span = t[-1] - t[0]
    t_cross = t[crossed[0]] - t[0] if crossed.size and t[crossed[0]] > t[0] else span
    return a0, b0, 1.0 / t_cross


def fit_exponential(t, y, mode=FitMode.DIRECT) -> DecayFit:
    """Levenberg-Marquardt fit of ``A exp(-gamma t) + B`` to samples."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 3:
        raise InsufficientSamplesError(f"need at least 3 points to fit, got {t.size}")
    if np.ptp(y) < 1e-12:
        return DecayFit(0.0, float(np.clip(np.mean(y), 0, 1)), 0.0, float(np.std(y)), mode,
                        n_points=t.size)
    t0 = t[0]
    span = t[-1] - t0
    u = (t - t0) / span
    a0, b0, g0 = _initial_guess(t, y)

    def resid(x):
        a, b, k = x
        return a * np.exp(-k * u) + b - y

    def jac(x):
        a, _, k = x
        e = np.exp(-k * u)
        return np.column_stack((e, np.ones_like(u), -a * u * e))

    x0 = np.array([a0, b0, max(g0 * span, 1e-6)])
    sol = least_squares(resid, x0, jac=jac, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                        max_nfev=2000)
    a, b, k = sol.x
    rms = float(math.sqrt(np.mean(sol.fun ** 2)))
    if not sol.success and sol.status <= 0:
        raise FitError(sol.message, (a, b, k / span), rms)
    if k < 0:
        raise FitError("fitted decay rate is negative", (a, b, k / span), rms)
    slack = max(OFFSET_SLACK, 10.0 * rms)
    if not -slack <= b <= 1 + slack:
        raise FitError(f"fitted offset {b:.3g} is not a population", (a, b, k / span), rms)
    b = min(max(b, 0.0), 1.0)  # asymptote 0 or 1 comes back a rounding error outside
    gamma = k / span
    # refer the amplitude back to t = 0
    a = a * math.exp(k * t0 / span) if k * t0 / span < 700 else a
    return DecayFit(float(a), float(b), float(gamma), rms, mode, n_points=t.size)


def _saturated(y):
    tail = y[-max(2, y.size // 10):]
    return float(np.ptp(tail)) < 1e-4


def fit_decay_curve(times, values, *, envelope_coverage: float = 0.5) -> DecayFit:
    """Envelope or direct fit, whichever leaves the smaller RMS residual.

    The envelope candidate is only considered when at least four prominent
    maxima exist and they extend over ``envelope_coverage`` of the time span;
    an oscillation that dies out early says nothing about the late decay.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < MIN_SAMPLES:
        raise InsufficientSamplesError(f"need >= {MIN_SAMPLES} samples, got {t.size}")
    candidates = []
    peaks = local_maxima(y)
    if _envelope_usable(t, peaks, envelope_coverage):
        try:
            candidates.append(fit_exponential(t[peaks], y[peaks], FitMode.ENVELOPE))
        except FitError:
            pass
    try:
        candidates.append(fit_exponential(t, y, FitMode.DIRECT))
    except FitError:
        if not candidates:
            raise
    best = min(candidates, key=lambda f: f.residual_rms)
    span = t[-1] - t[0]
    spans = best.gamma * span >= 3 or _saturated(y)
    return DecayFit(best.amplitude_A, float(np.clip(best.offset_B, 0, 1)), best.gamma,
                    best.residual_rms, best.mode, n_points=best.n_points, spans_decay=spans)


def extract_rate(trace: TimeTrace, state_index: int = T0) -> DecayFit:
    """Fit the blockade-lifting rate to one population of a propagated trace."""
    return fit_decay_curve(trace.times, trace.population(state_index))


def rate_horizon(p: SystemParams, c: NoiseChannel, decay_times: float = 8.0) -> float:
    """Propagation time covering ``decay_times`` of the slowest Liouvillian mode."""
    rates = slowest_rates(p, c, n=1)
    if rates.size == 0:
        return 1e3
    return decay_times / rates[0]


def simulate_rate(p: SystemParams, c: NoiseChannel, *, max_samples: int = 50_000,
                  decay_times: float = 8.0, state_index: int = T0):
    """Propagate from |T0><T0| and fit; returns ``(DecayFit, TimeTrace)``."""
    t_end = rate_horizon(p, c, decay_times)
    cfg = PropagationConfig(t_end=t_end, max_samples=max_samples)
    trace = propagate(p, c, None, cfg)
    return extract_rate(trace, state_index), trace


def numeric_gamma(p: SystemParams, c: NoiseChannel, **kwargs) -> float:
    if p.delta_ez == 0:
        return 0.0
    return simulate_rate(p, c, **kwargs)[0].gamma


def _grid_point(args):
    p, c, kwargs = args
    return simulate_rate(p, c, **kwargs)[0]


class GridError(RuntimeError):
    """A grid point failed; ``partial`` holds the fits computed before it."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def _run_grid(tasks, jobs):
    fits = []
    if jobs <= 1:
        for task in tasks:
            try:
                fits.append(_grid_point(task))
            except Exception as exc:
                raise GridError(f"grid point {len(fits)} failed: {exc}", fits) from exc
        return fits
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        iterator = pool.map(_grid_point, tasks)
        while True:
            try:
                fits.append(next(iterator))
            except StopIteration:
                return fits
            except Exception as exc:
                raise GridError(f"grid point {len(fits)} failed: {exc}", fits) from exc


@dataclass(frozen=True)
class RateCurve:
    x: np.ndarray
    gammas: np.ndarray
    fits: tuple = field(repr=False)

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.gammas))

    @property
    def has_interior_maximum(self) -> bool:
        k = self.argmax
        g = self.gammas
        return 0 < k < g.size - 1 and g[k] > g[0] and g[k] > g[-1]


def rate_vs_noise_grid(p: SystemParams, kind, time_constants, *, jobs: int = 1,
                       **rate_kwargs) -> RateCurve:
    """Blockade rate for each time constant of a (log) grid."""
    tcs = np.asarray(time_constants, dtype=float)
    if tcs.size < 10:
        raise ValueError("need at least 10 grid points")
    if np.any(np.diff(tcs) <= 0):
        raise ValueError("grid must be sorted ascending")
    kind = ChannelKind(kind)
    if p.delta_ez == 0:
        fits = tuple(DecayFit(0.0, 1.0, 0.0, 0.0, FitMode.DIRECT) for _ in tcs)
        return RateCurve(tcs, np.zeros(tcs.size), fits)
    tasks = [(p, NoiseChannel(kind, tc), rate_kwargs) for tc in tcs]
    fits = tuple(_run_grid(tasks, jobs))
    return RateCurve(tcs, np.array([f.gamma for f in fits]), fits)


def rate_vs_zeeman(p: SystemParams, c: NoiseChannel, delta_ez_grid, *, jobs: int = 1,
                   **rate_kwargs) -> RateCurve:
    """Blockade rate for each Zeeman-energy difference (GHz)."""
    grid = np.asarray(delta_ez_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty delta_ez grid")
    gammas = np.zeros(grid.size)
    fits = [DecayFit(0.0, 1.0, 0.0, 0.0, FitMode.DIRECT)] * grid.size
    live = [k for k, d in enumerate(grid) if d > 0]
    tasks = [(p.with_delta_ez(grid[k]), c, rate_kwargs) for k in live]
    for k, fit in zip(live, _run_grid(tasks, jobs)):
        fits[k] = fit
        gammas[k] = fit.gamma
    return RateCurve(grid, gammas, tuple(fits))


@dataclass(frozen=True)
class CalibrationResult:
    time_constant: float
    objective: float
    kind: ChannelKind
    at_boundary: bool
    n_evaluations: int
    simulated: tuple = ()


def _log_loss(data, gammas):
    total = 0.0
    for d, g in zip(data, gammas):
        if g <= 0:
            return math.inf
        total += d.weight * (math.log(g) - math.log(d.gamma_obs)) ** 2
    return total


def calibrate_noise_time(data, p: SystemParams, kind, *, bounds=(1e-3, 1e6),
                         points_per_decade: int = 4, xtol: float = 1e-5,
                         **rate_kwargs) -> CalibrationResult:
    """Time constant minimising sum w (log gamma_sim - log gamma_obs)^2.

    A log-spaced scan locates the basins (the rate is not monotonic in the
    time constant, so the objective can have a second, Zeno-side basin);
    golden-section search refines each one and the lowest wins.  If the scan
    minimum sits on the edge of ``bounds`` the edge value is returned with
    ``at_boundary``.
    """
    data = list(data)
    if len(data) < 1:
        raise ValueError("no data points")
    kind = ChannelKind(kind)
    lo, hi = (math.log10(b) for b in bounds)
    cache = {}

    def objective(log_tc):
        key = float(log_tc)
        if key not in cache:
            c = NoiseChannel(kind, 10.0 ** key)
            gammas = [numeric_gamma(p.with_delta_ez(d.delta_ez), c, **rate_kwargs) for d in data]
            cache[key] = (_log_loss(data, gammas), tuple(gammas))
        return cache[key][0]

    n_scan = max(3, int(round((hi - lo) * points_per_decade)) + 1)
    grid = np.linspace(lo, hi, n_scan)
    values = np.array([objective(x) for x in grid])
    k = int(np.argmin(values))
    if k == 0 or k == n_scan - 1:
        warnings.warn("calibration objective has no interior minimum; returning boundary value",
                      RuntimeWarning, stacklevel=2)
        best = grid[k]
        return CalibrationResult(10.0 ** best, float(values[k]), kind, True, len(cache),
                                 cache[float(best)][1])
    # refine every interior basin of the scan; the Zeno side can host a shallower twin
    basins = [i for i in range(1, n_scan - 1)
              if values[i] <= values[i - 1] and values[i] <= values[i + 1]]
    best = float(grid[k])
    for i in basins:
        res = minimize_scalar(objective, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                              method="golden", options={"xtol": xtol})
        if res.fun < objective(best):
            best = float(res.x)
    return CalibrationResult(10.0 ** best, float(objective(best)), kind, False, len(cache),
                             cache[best][1])


def synthetic_rate_data(p: SystemParams, c: NoiseChannel, delta_ez_values, weight=1.0,
                        **rate_kwargs):
    """Rate data generated by the simulator itself (calibration fixtures)."""
    return [RateDataPoint(float(d), numeric_gamma(p.with_delta_ez(d), c, **rate_kwargs), weight)
            for d in delta_ez_values]
