"""``blockade-sim`` command-line front end.

Every command reads a TOML run configuration (``--config``), applies flag
overrides on top of it and writes one or more CSV files.  Exit status is 0
on success, 1 on a numerical failure and 2 on a usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import csvio, lindblad, paritytomo, ratefit, swtheory
from .qmodel import T0, ChannelKind, NoiseChannel, SystemParams

log = logging.getLogger("blockade_sim")

OUTDIR_ENV = "BLOCKADE_SIM_OUTDIR"
COMMANDS = ("evolve", "sweep-noise", "sweep-zeeman", "fit-rate", "calibrate",
            "sw-compare", "regime", "threshold", "tomography")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
NUMERIC_ERRORS = (lindblad.IntegrationError, ratefit.FitError, ratefit.GridError,
                  ratefit.InsufficientSamplesError, swtheory.PerturbationError,
                  lindblad.DegenerateSteadyStateError, np.linalg.LinAlgError, FloatingPointError)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    params: SystemParams
    channel: NoiseChannel
    section: dict = field(default_factory=dict)
    output_path: Path = Path("out.csv")
    seed: int = 0
    jobs: int = 1
    base_dir: Path = Path(".")

    def path(self, key: str, override=None) -> Path:
        # command-line paths are relative to the cwd, config paths to the config file
        if override is not None:
            return Path(override)
        value = self.section.get(key)
        if value is None:
            raise ConfigError(f"[{self.command.replace('-', '_')}] needs '{key}'")
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


# ---------------------------------------------------------------- config ---

def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from None


def _set_dotted(doc: dict, assignment: str):
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    *parents, leaf = key.strip().split(".")
    node = doc
    for name in parents:
        node = node.setdefault(name, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {name!r} is not a table")
    node[leaf] = value


def parse_grid(spec, name: str = "grid") -> np.ndarray:
    """A grid is a list of numbers or a table ``{start, stop, num, scale}``."""
    if isinstance(spec, dict):
        try:
            start, stop, num = float(spec["start"]), float(spec["stop"]), int(spec["num"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{name}: a table grid needs numeric start, stop and num") from None
        scale = spec.get("scale", "linear")
        if num < 1:
            raise ConfigError(f"{name}: empty grid")
        if scale == "log":
            if start <= 0 or stop <= 0:
                raise ConfigError(f"{name}: log grid needs positive bounds")
            return np.logspace(math.log10(start), math.log10(stop), num)
        if scale != "linear":
            raise ConfigError(f"{name}: unknown scale {scale!r}")
        return np.linspace(start, stop, num)
    if isinstance(spec, (list, tuple)):
        if not spec:
            raise ConfigError(f"{name}: empty grid")
        try:
            return np.array([float(v) for v in spec])
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: grid entries must be numbers") from None
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return np.array([float(spec)])
    raise ConfigError(f"{name}: expected a list or a {{start, stop, num}} table")


def _default_output(command: str) -> Path:
    return Path(os.environ.get(OUTDIR_ENV, ".")) / f"{command}.csv"


def build_run_config(args) -> RunConfig:
    doc = load_toml(args.config) if args.config else {}
    for assignment in args.set or ():
        _set_dotted(doc, assignment)
    params = dict(doc.get("params", {}))
    channel = dict(doc.get("channel", {}))
    for flag, key in (("eps", "detuning_eps"), ("tunnel", "tunnel_t"), ("delta_ez", "delta_ez")):
        if getattr(args, flag) is not None:
            params[key] = getattr(args, flag)
    if args.channel is not None:
        channel["kind"] = args.channel
    if args.time_constant is not None:
        channel["time_constant"] = args.time_constant
    try:
        p = SystemParams(float(params.get("detuning_eps", 140.0)), float(params.get("tunnel_t", 3.0)),
                         float(params.get("delta_ez", 0.02)))
        c = NoiseChannel(ChannelKind(channel.get("kind", "dephasing")),
                         float(channel.get("time_constant", 0.2)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameters: {exc}") from None
    unknown = set(params) - {"detuning_eps", "tunnel_t", "delta_ez"}
    if unknown:
        raise ConfigError(f"unknown [params] keys: {sorted(unknown)}")
    section = doc.get(args.command.replace("-", "_"), {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{args.command}] must be a table")
    out = args.out or doc.get("output")
    output = Path(out) if out else _default_output(args.command)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    jobs = args.jobs if args.jobs is not None else doc.get("jobs", 1)
    if not isinstance(seed, int) or not isinstance(jobs, int) or jobs < 1:
        raise ConfigError("seed must be an integer and jobs a positive integer")
    base = Path(args.config).resolve().parent if args.config else Path(".")
    return RunConfig(args.command, p, c, section, output, seed, jobs, base)


# -------------------------------------------------------------- commands ---

def _sibling(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}_{tag}{path.suffix or '.csv'}")


def _trace_rows(trace, fit):
    overlay = fit(trace.times)
    for t, pops, f in zip(trace.times, trace.populations, overlay):
        yield {"t_ns": float(t), "p_S02": float(pops[0]), "p_S11": float(pops[1]),
               "p_T0": float(pops[2]), "p_T0_fit": float(f)}


def run_evolve(cfg: RunConfig) -> list:
    sec = cfg.section
    tcs = sec.get("time_constants")
    channels = ([cfg.channel.with_time_constant(float(v)) for v in parse_grid(tcs, "time_constants")]
                if tcs is not None else [cfg.channel])
    written = []
    for c in channels:
        t_end = float(sec.get("t_end", ratefit.rate_horizon(cfg.params, c)))
        prop = lindblad.PropagationConfig(t_end=t_end, max_samples=int(sec.get("max_samples", 20_000)),
                                          method=sec.get("method", "expm"),
                                          sample_every=sec.get("sample_every"))
        trace = lindblad.propagate(cfg.params, c, None, prop)
        fit = ratefit.extract_rate(trace)
        path = cfg.output_path if tcs is None else _sibling(cfg.output_path, f"tc{c.time_constant!r}")
        written.append(csvio.write_rows(path, "trace", _trace_rows(trace, fit)))
        log.info("%s: gamma = %.6g /ns", path, fit.gamma)
    return written


def _sweep_rows(curve, **fixed):
    for x, fit in zip(curve.x, curve.fits):
        yield dict(fixed, gamma_per_ns=float(fit.gamma), fit_mode=fit.mode, residual_rms=float(fit.residual_rms),
                   _x=float(x))


def run_sweep_noise(cfg: RunConfig) -> list:
    if "time_constants" not in cfg.section:
        raise ConfigError("[sweep_noise] needs 'time_constants'")
    tcs = parse_grid(cfg.section["time_constants"], "time_constants")
    dez_values = parse_grid(cfg.section.get("delta_ez", cfg.params.delta_ez), "delta_ez")
    rows = []
    for dez in dez_values:
        curve = ratefit.rate_vs_noise_grid(cfg.params.with_delta_ez(float(dez)), cfg.channel.kind, tcs,
                                           jobs=cfg.jobs)
        for row in _sweep_rows(curve, channel=cfg.channel.kind, delta_ez_ghz=float(dez)):
            row["time_constant_ns"] = row.pop("_x")
            rows.append(row)
    return [csvio.write_rows(cfg.output_path, "noise_sweep", rows)]


def run_sweep_zeeman(cfg: RunConfig) -> list:
    if "delta_ez" not in cfg.section:
        raise ConfigError("[sweep_zeeman] needs 'delta_ez'")
    grid = parse_grid(cfg.section["delta_ez"], "delta_ez")
    curve = ratefit.rate_vs_zeeman(cfg.params, cfg.channel, grid, jobs=cfg.jobs)
    rows = []
    for row in _sweep_rows(curve, channel=cfg.channel.kind, time_constant_ns=cfg.channel.time_constant):
        row["delta_ez_ghz"] = row.pop("_x")
        rows.append(row)
    return [csvio.write_rows(cfg.output_path, "zeeman_sweep", rows)]


def run_fit_rate(cfg: RunConfig, input_path=None) -> list:
    _, rows = csvio.read_rows(cfg.path("input", input_path), "trace")
    column = cfg.section.get("column", "p_T0")
    if column not in ("p_S02", "p_S11", "p_T0"):
        raise ConfigError(f"cannot fit column {column!r}")
    t = np.array([r["t_ns"] for r in rows])
    y = np.array([r[column] for r in rows])
    fit = ratefit.fit_decay_curve(t, y)
    row = {"amplitude_A": fit.amplitude_A, "offset_B": fit.offset_B, "gamma_per_ns": fit.gamma,
           "residual_rms": fit.residual_rms, "fit_mode": fit.mode, "n_points": fit.n_points,
           "spans_decay": fit.spans_decay}
    return [csvio.write_rows(cfg.output_path, "fit", [row])]


def run_calibrate(cfg: RunConfig, input_path=None) -> list:
    data = csvio.read_rate_data(cfg.path("data", input_path))
    if not data:
        raise ConfigError("calibration data file has no rows")
    sec = cfg.section
    bounds = tuple(float(b) for b in sec.get("bounds", (1e-3, 1e6)))
    if len(bounds) != 2 or not 0 < bounds[0] < bounds[1]:
        raise ConfigError("bounds must be [low, high] with 0 < low < high")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        res = ratefit.calibrate_noise_time(data, cfg.params, cfg.channel.kind, bounds=bounds,
                                           points_per_decade=int(sec.get("points_per_decade", 4)))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    rows = [{"channel": res.kind, "delta_ez_ghz": d.delta_ez, "gamma_obs_per_ns": d.gamma_obs,
             "gamma_model_per_ns": g, "weight": d.weight, "time_constant_ns": res.time_constant,
             "objective": res.objective, "at_boundary": res.at_boundary,
             "n_evaluations": res.n_evaluations}
            for d, g in zip(data, res.simulated)]
    return [csvio.write_rows(cfg.output_path, "calibration", rows)]


def _sw_row(task):
    p, c, ratio, numeric = task
    row = {"delta_ez_ghz": p.delta_ez, "ratio_dez_over_j": ratio,
           "validity": swtheory.validity(ratio), "error": ""}
    errors = []
    try:
        row["gamma_analytic_limit_per_ns"] = swtheory.gamma_analytic(p, c, form="limit")
        if c.kind is ChannelKind.DEPHASING:
            row["gamma_analytic_full_per_ns"] = swtheory.gamma_analytic(p, c, form="full")
    except ValueError as exc:
        errors.append(f"analytic: {exc}")
    try:
        row["gamma_sw_channel_per_ns"] = swtheory.gamma_transformed_channel(p, c)
    except swtheory.PerturbationError as exc:
        errors.append(f"sw: {exc}")
    if numeric:
        try:
            row["gamma_numeric_per_ns"] = ratefit.numeric_gamma(p, c)
        except NUMERIC_ERRORS as exc:
            errors.append(f"numeric: {exc}")
    row["error"] = "; ".join(errors)
    return row


def run_sw_compare(cfg: RunConfig) -> list:
    sec = cfg.section
    j = swtheory.exchange_j(cfg.params)
    if "ratio" in sec:
        ratios = parse_grid(sec["ratio"], "ratio")
        tasks = [(cfg.params.with_delta_ez(float(r) * j), cfg.channel, float(r)) for r in ratios]
    elif "delta_ez" in sec:
        grid = parse_grid(sec["delta_ez"], "delta_ez")
        tasks = [(cfg.params.with_delta_ez(float(d)), cfg.channel, float(d) / j) for d in grid]
    else:
        raise ConfigError("[sw_compare] needs a 'delta_ez' or 'ratio' grid")
    numeric = bool(sec.get("numeric", True))
    tasks = [t + (numeric,) for t in tasks]
    if cfg.jobs > 1 and numeric:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_sw_row, tasks))
    else:
        rows = [_sw_row(t) for t in tasks]
    return [csvio.write_rows(cfg.output_path, "sw_compare", rows)]


def run_regime(cfg: RunConfig) -> list:
    sec = cfg.section
    wait = float(sec.get("wait_time", 1e5))
    grid = parse_grid(sec.get("delta_ez", cfg.params.delta_ez), "delta_ez")
    rows = []
    for dez in grid:
        rep = swtheory.classify_regime(cfg.params.with_delta_ez(float(dez)), cfg.channel, wait,
                                       numeric_fallback=bool(sec.get("numeric_fallback", True)))
        rows.append({"delta_ez_ghz": float(dez), "j_ghz": rep.j_split, "ratio_dez_over_j": rep.ratio,
                     "validity": rep.validity, "gamma_per_ns": rep.gamma,
                     "gamma_source": rep.gamma_source, "wait_time_ns": wait,
                     "decays_during_wait": rep.decays_during_wait, "regime": rep.regime})
    return [csvio.write_rows(cfg.output_path, "regime", rows)]


def run_threshold(cfg: RunConfig, input_path=None) -> list:
    _, devices = csvio.read_rows(cfg.path("devices", input_path), "devices")
    if not devices:
        raise ConfigError("device list is empty")
    sec = cfg.section
    default_t2 = float(sec.get("t2", cfg.channel.time_constant
                              if cfg.channel.kind is ChannelKind.DEPHASING else 0.2))
    default_wait = float(sec.get("wait_time", 1e5))
    rows = []
    for dev in devices:
        eps = dev.get("eps_ghz", cfg.params.detuning_eps)
        tunnel = dev.get("tunnel_ghz", cfg.params.tunnel_t)
        t2 = dev.get("t2_ns", default_t2)
        wait = dev.get("wait_time_ns", default_wait)
        rep = swtheory.threshold_report(dev["delta_ez_ghz"], eps, t2, wait)
        notes = [rep.annotation] if rep.annotation else []
        try:
            regime = swtheory.classify_regime(SystemParams(eps, tunnel, dev["delta_ez_ghz"]),
                                              NoiseChannel.dephasing(t2), wait)
            regime_name, gamma = regime.regime.value, regime.gamma
        except (ValueError, *NUMERIC_ERRORS) as exc:
            regime_name, gamma = "unknown", math.nan
            notes.append(f"regime failed: {exc}")
        if rep.reason == "no_mixing":
            notes.append("parity readout unreachable: no Zeeman mixing")
        elif rep.reason == "unbounded":
            notes.append("parity readout at every tunnel coupling")
        rows.append({"device": dev["device"], "delta_ez_ghz": dev["delta_ez_ghz"], "eps_ghz": eps,
                     "tunnel_ghz": tunnel, "t2_ns": t2, "wait_time_ns": wait,
                     "t_max_ghz": rep.threshold, "threshold_status": rep.reason,
                     "regime": regime_name, "gamma_per_ns": gamma,
                     "published_t_max_ghz": rep.published, "annotation": "; ".join(notes)})
    return [csvio.write_rows(cfg.output_path, "threshold", rows)]


def named_state(name: str, rng, rank: int = 4) -> np.ndarray:
    s = 1 / math.sqrt(2)
    vectors = {"uu": [1, 0, 0, 0], "singlet": [0, s, -s, 0], "t0": [0, s, s, 0],
               "ud": [0, 1, 0, 0]}
    if name in vectors:
        v = np.array(vectors[name], dtype=complex)
        return np.outer(v, v.conj())
    if name == "mixed":
        return np.eye(4, dtype=complex) / 4
    if name == "random":
        return paritytomo.random_state(rng, rank).entries
    raise ConfigError(f"unknown state {name!r}; choose from {sorted(vectors) + ['mixed', 'random']}")


def run_tomography(cfg: RunConfig, input_path=None) -> list:
    sec = cfg.section
    written = []
    if input_path is not None or "probs" in sec:
        probs = csvio.read_probs(cfg.path("probs", input_path))
    else:
        rng = np.random.default_rng(cfg.seed)
        rho = named_state(sec.get("state", "singlet"), rng, int(sec.get("rank", 4)))
        shots = sec.get("shots")
        probs = paritytomo.simulate_probs(rho, shots=None if shots is None else int(shots),
                                          seed=cfg.seed + 1)
        written.append(csvio.write_probs(_sibling(cfg.output_path, "probs"), probs))
        written.append(csvio.write_density_matrix(_sibling(cfg.output_path, "true"), rho))
    try:
        estimate = paritytomo.reconstruct(probs)
    except ValueError as exc:
        raise ConfigError(f"invalid probabilities: {exc}") from None
    written.insert(0, csvio.write_density_matrix(cfg.output_path, estimate.entries))
    return written


RUNNERS = {
    "evolve": run_evolve, "sweep-noise": run_sweep_noise, "sweep-zeeman": run_sweep_zeeman,
    "fit-rate": run_fit_rate, "calibrate": run_calibrate, "sw-compare": run_sw_compare,
    "regime": run_regime, "threshold": run_threshold, "tomography": run_tomography,
}
TAKES_INPUT = {"fit-rate", "calibrate", "threshold", "tomography"}


# ------------------------------------------------------------------ main ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockade-sim",
                                     description="Pauli-blockade lifting simulator and analysis tools.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="TOML run configuration")
        cmd.add_argument("--jobs", type=int, help="worker processes for sweeps")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--out", help=f"output CSV (default ${OUTDIR_ENV}/<command>.csv)")
        cmd.add_argument("--eps", type=float, help="detuning, GHz")
        cmd.add_argument("--tunnel", type=float, help="tunnel coupling, GHz")
        cmd.add_argument("--delta-ez", type=float, help="Zeeman energy difference, GHz")
        cmd.add_argument("--channel", choices=[k.value for k in ChannelKind])
        cmd.add_argument("--time-constant", type=float, help="T1 or T2 of the channel, ns")
        cmd.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override any config key, e.g. evolve.t_end=5e4")
        if name in TAKES_INPUT:
            cmd.add_argument("--input", help="input CSV (overrides the config entry)")
    check = sub.add_parser("schema-check", help="validate CSV files produced by this tool")
    check.add_argument("files", nargs="+")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "schema-check":
        status = EXIT_OK
        for f in args.files:
            try:
                print(f"{f}: ok ({csvio.check_file(f)})")
            except (csvio.SchemaError, OSError) as exc:
                print(f"{f}: invalid: {exc}", file=sys.stderr)
                status = EXIT_NUMERIC
        return status
    try:
        cfg = build_run_config(args)
        runner = RUNNERS[args.command]
        kwargs = {"input_path": args.input} if args.command in TAKES_INPUT else {}
        written = runner(cfg, **kwargs)
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, csvio.SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
