"""CSV schemas, writers and readers.

Every file starts with a header row; column names carry their units as a
suffix (``_ns``, ``_ghz``, ``_per_ns``).  Floats are written with ``repr`` so
that output is byte-for-byte reproducible.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

FLOAT, OPT_FLOAT, INT, BOOL, STR = "float", "float?", "int", "bool", "str"

SCHEMAS = {
    "trace": {"t_ns": FLOAT, "p_S02": FLOAT, "p_S11": FLOAT, "p_T0": FLOAT, "p_T0_fit": FLOAT},
    "rate_data": {"delta_ez_ghz": FLOAT, "gamma_per_ns": FLOAT, "weight": FLOAT},
    "fit": {"amplitude_A": FLOAT, "offset_B": FLOAT, "gamma_per_ns": FLOAT,
            "residual_rms": FLOAT, "fit_mode": STR, "n_points": INT, "spans_decay": BOOL},
    "noise_sweep": {"channel": STR, "delta_ez_ghz": FLOAT, "time_constant_ns": FLOAT,
                    "gamma_per_ns": FLOAT, "fit_mode": STR, "residual_rms": FLOAT},
    "zeeman_sweep": {"channel": STR, "time_constant_ns": FLOAT, "delta_ez_ghz": FLOAT,
                     "gamma_per_ns": FLOAT, "fit_mode": STR, "residual_rms": FLOAT},
    "calibration": {"channel": STR, "delta_ez_ghz": FLOAT, "gamma_obs_per_ns": FLOAT,
                    "gamma_model_per_ns": FLOAT, "weight": FLOAT, "time_constant_ns": FLOAT,
                    "objective": FLOAT, "at_boundary": BOOL, "n_evaluations": INT},
    "sw_compare": {"delta_ez_ghz": FLOAT, "ratio_dez_over_j": FLOAT, "validity": STR,
                   "gamma_numeric_per_ns": OPT_FLOAT, "gamma_analytic_full_per_ns": OPT_FLOAT,
                   "gamma_analytic_limit_per_ns": FLOAT, "gamma_sw_channel_per_ns": OPT_FLOAT,
                   "error": STR},
    "regime": {"delta_ez_ghz": FLOAT, "j_ghz": FLOAT, "ratio_dez_over_j": FLOAT,
               "validity": STR, "gamma_per_ns": FLOAT, "gamma_source": STR,
               "wait_time_ns": FLOAT, "decays_during_wait": FLOAT, "regime": STR},
    "threshold": {"device": STR, "delta_ez_ghz": FLOAT, "eps_ghz": FLOAT, "tunnel_ghz": FLOAT,
                  "t2_ns": FLOAT, "wait_time_ns": FLOAT, "t_max_ghz": OPT_FLOAT,
                  "threshold_status": STR, "regime": STR, "gamma_per_ns": FLOAT,
                  "published_t_max_ghz": OPT_FLOAT, "annotation": STR},
    "tomo_probs": {"m": STR, "n": STR, "p": FLOAT},
    "tomo_rho": {"row": INT, "col": INT, "re": FLOAT, "im": FLOAT},
    "devices": {"device": STR, "delta_ez_ghz": FLOAT},
}

#: Optional extra columns accepted on input device lists.
DEVICE_OPTIONAL = {"eps_ghz": FLOAT, "tunnel_ghz": FLOAT, "t2_ns": FLOAT, "wait_time_ns": FLOAT}


class SchemaError(ValueError):
    pass


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if hasattr(value, "value"):  # enums
        return str(value.value)
    return str(value)


def write_rows(path, schema: str, rows) -> Path:
    columns = list(SCHEMAS[schema])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c)) for c in columns])
    return path


def _parse(kind, text, column, line):
    if kind == STR:
        return text
    if kind == OPT_FLOAT and text == "":
        return None
    try:
        if kind in (FLOAT, OPT_FLOAT):
            value = float(text)
            if math.isnan(value):
                raise ValueError
            return value
        if kind == INT:
            return int(text)
        if kind == BOOL:
            if text not in ("true", "false"):
                raise ValueError
            return text == "true"
    except ValueError:
        raise SchemaError(f"line {line}: column {column!r} expects {kind}, got {text!r}") from None
    raise AssertionError(kind)


def detect_schema(header) -> str:
    header = list(header)
    for name, cols in SCHEMAS.items():
        if header == list(cols):
            return name
    if header[:2] == list(SCHEMAS["devices"]) and set(header[2:]) <= set(DEVICE_OPTIONAL):
        return "devices"
    raise SchemaError(f"header {header} does not match any known schema")


def read_rows(path, schema: str | None = None):
    """Parse and validate a CSV; returns ``(schema_name, rows)``."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        found = detect_schema(header)
        if schema is not None and found != schema:
            raise SchemaError(f"{path}: expected a {schema!r} file, found {found!r}")
        types = dict(SCHEMAS[found])
        if found == "devices":
            types.update({c: DEVICE_OPTIONAL[c] for c in header[2:]})
        rows = []
        for line, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise SchemaError(f"line {line}: expected {len(header)} fields, got {len(raw)}")
            rows.append({c: _parse(types[c], v, c, line) for c, v in zip(header, raw)})
    return found, rows


def check_file(path) -> str:
    """Validate a produced file against its schema; returns the schema name."""
    schema, rows = read_rows(path)
    if schema == "trace":
        for r in rows:
            total = r["p_S02"] + r["p_S11"] + r["p_T0"]
            if abs(total - 1) > 1e-9:
                raise SchemaError(f"{path}: populations sum to {total} at t = {r['t_ns']}")
    if schema == "tomo_probs" and len(rows) != 15:
        raise SchemaError(f"{path}: expected 15 probabilities, got {len(rows)}")
    if schema == "tomo_rho" and len(rows) != 16:
        raise SchemaError(f"{path}: expected 16 matrix entries, got {len(rows)}")
    return schema


def read_rate_data(path):
    from .ratefit import RateDataPoint

    _, rows = read_rows(path, "rate_data")
    return [RateDataPoint(r["delta_ez_ghz"], r["gamma_per_ns"], r["weight"]) for r in rows]


def write_rate_data(path, points):
    return write_rows(path, "rate_data", ({"delta_ez_ghz": p.delta_ez, "gamma_per_ns": p.gamma_obs,
                                           "weight": p.weight} for p in points))


def read_probs(path) -> dict:
    _, rows = read_rows(path, "tomo_probs")
    probs = {(r["m"].upper(), r["n"].upper()): r["p"] for r in rows}
    if len(probs) != 15:
        raise SchemaError(f"{path}: expected 15 distinct settings, got {len(probs)}")
    return probs


def write_probs(path, probs: dict):
    from .paritytomo import SETTINGS

    return write_rows(path, "tomo_probs", ({"m": m, "n": n, "p": float(probs[(m, n)])}
                                           for m, n in SETTINGS))


def write_density_matrix(path, rho):
    rho = np.asarray(rho, dtype=complex)
    return write_rows(path, "tomo_rho", ({"row": i, "col": j, "re": float(rho[i, j].real),
                                          "im": float(rho[i, j].imag)}
                                         for i in range(rho.shape[0]) for j in range(rho.shape[1])))


def read_density_matrix(path):
    _, rows = read_rows(path, "tomo_rho")
    n = int(round(math.sqrt(len(rows))))
    rho = np.zeros((n, n), dtype=complex)
    for r in rows:
        rho[r["row"], r["col"]] = complex(r["re"], r["im"])
    return rho
