"""Experiment configuration: flat TOML documents validated against a per-subcommand schema."""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass
from typing import Any, Callable, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .errors import ConfigError

REQUIRED = object()


@dataclass(frozen=True)
class Field:
    kind: type
    default: Any = REQUIRED
    check: Optional[Callable[[Any], bool]] = None
    rule: str = ""
    doc: str = ""


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _order(v):
    return 1 <= v <= 5


PROFILE_FIELDS = {
    "profile_start": Field(float, 0.0, doc="left end of the control support"),
    "profile_len": Field(float, math.pi, lambda v: 0 < v <= 2 * math.pi, "in (0, 2 pi]",
                         "length of the control support"),
    "profile_shape": Field(str, "raised_cosine",
                           lambda v: v in ("raised_cosine", "constant"),
                           "raised_cosine or constant", "profile shape tag"),
}

DATA_FIELDS = {
    "seed": Field(int, REQUIRED, _nonneg, ">= 0", "random seed (mandatory)"),
    "norm": Field(float, 1.0, _pos, "> 0", "L2 norm of the random data about the mean"),
    "decay": Field(float, 1.0, _nonneg, ">= 0", "spectral decay exponent of the random data"),
    "max_mode": Field(int, 0, _nonneg, ">= 0", "highest excited mode (0: all)"),
}

SCHEMAS = {
    "simulate": {
        "j": Field(int, 1, _order, "in 1..5", "dispersion order"),
        "N": Field(int, 32, _pos, "> 0", "spectral truncation"),
        "T": Field(float, 10.0, _pos, "> 0", "final time"),
        "dt": Field(float, 1e-3, _pos, "> 0", "time step"),
        "initial": Field(str, "cos", lambda v: v in ("cos", "random", "file"),
                         "cos, random or file", "initial datum"),
        "initial_file": Field(str, "", doc="CSV field file when initial = file"),
        "amplitude": Field(float, 1.0, doc="amplitude of cos x when initial = cos"),
        "nonlinear": Field(bool, True, doc="include u u_x"),
        "store_every": Field(int, 100, _pos, "> 0", "steps between stored snapshots"),
        "drift_tol": Field(float, 1e-6, _pos, "> 0", "relative drift allowed for E and H"),
        **{k: (Field(int, 0, _nonneg, ">= 0", v.doc) if k == "seed" else v)
           for k, v in DATA_FIELDS.items()},
    },
    "control": {
        "j": Field(int, 1, _order, "in 1..5", "dispersion order"),
        "N": Field(int, 32, _pos, "> 0", "spectral truncation of the state"),
        "n_modes": Field(int, 16, _pos, "> 0", "moment mode set |k| <= n_modes"),
        "T": Field(float, 1.0, _pos, "> 0", "control horizon"),
        "beta_mode": Field(str, "continuum", lambda v: v in ("continuum", "truncated"),
                           "continuum or truncated", "controllability weight variant"),
        "refine": Field(bool, True, doc="apply the least-squares refinement"),
        "formula_tol": Field(float, 1e-3, _pos, "> 0", "relative residual allowed for the formula"),
        "refined_tol": Field(float, 1e-6, _pos, "> 0", "relative residual allowed after refinement"),
        **PROFILE_FIELDS, **DATA_FIELDS,
        "norm": Field(float, 0.1, _pos, "> 0", "L2 norm of the random data about the mean"),
        "max_mode": Field(int, 16, _nonneg, ">= 0", "highest excited mode (0: all)"),
    },
    "stabilize": {
        "j": Field(int, 1, _order, "in 1..5", "dispersion order"),
        "N": Field(int, 64, _pos, "> 0", "spectral truncation"),
        "lam": Field(float, 0.5, _nonneg, ">= 0", "decay parameter lambda"),
        "T": Field(float, 10.0, _pos, "> 0", "final time"),
        "dt": Field(float, 1e-2, _pos, "> 0", "time step"),
        "nonlinear": Field(bool, False, doc="run the nonlinear closed loop"),
        "store_every": Field(int, 1, _pos, "> 0", "steps between stored snapshots"),
        "rate_fraction": Field(float, 0.9, _pos, "> 0", "required gamma / lambda (linear runs)"),
        **PROFILE_FIELDS, **DATA_FIELDS,
    },
    "global-control": {
        "j": Field(int, 1, _order, "in 1..5", "dispersion order"),
        "N": Field(int, 24, _pos, "> 0", "spectral truncation"),
        "dt": Field(float, 1e-3, _pos, "> 0", "time step"),
        "stabilize_tol": Field(float, 0.05, _pos, "> 0", "damping target for ||u - mean||"),
        "T_local": Field(float, 1.0, _pos, "> 0", "horizon of the local control"),
        "max_damping_time": Field(float, 400.0, _pos, "> 0", "cap on each damping leg"),
        "terminal_tol": Field(float, 1e-4, _pos, "> 0", "relative terminal residual allowed"),
        **PROFILE_FIELDS, **{**DATA_FIELDS, "max_mode": Field(int, 3, _nonneg, ">= 0",
                                                                "highest excited mode (0: all)")},
    },
    "verify-lemmas": {
        "j_max": Field(int, 5, _order, "in 1..5", "largest order checked"),
        "k_max": Field(int, 10_000, lambda v: v >= 6, ">= 6", "gap check range"),
        "trials": Field(int, 10_000, _pos, "> 0", "random trials per order"),
        "rtol": Field(float, 1e-9, _pos, "> 0", "relative tolerance of the identities"),
        "seed": DATA_FIELDS["seed"],
    },
    "strichartz": {
        "j": Field(int, 1, _order, "in 1..5", "dispersion order"),
        "b": Field(float, 0.4, lambda v: 0.25 < v < 1, "in (1/4, 1)", "exponent b"),
        "k_max": Field(int, 200, lambda v: v >= 4, ">= 4", "scan range in k"),
        "tau_max": Field(float, 1000.0, _pos, "> 0", "scan range in |tau|"),
        "doublings": Field(int, 1, _pos, "> 0", "domain doublings for the plateau test"),
        "plateau_tol": Field(float, 0.01, _pos, "> 0", "relative growth allowed on doubling"),
        "ensemble": Field(bool, True, doc="run the L4 / X^{0,b} ensemble"),
        "ensemble_N": Field(list, [16, 32, 64],
                            lambda v: len(v) >= 2 and all(isinstance(n, int) and n > 0 for n in v),
                            "at least two positive integers", "truncations of the ensemble"),
        "draws": Field(int, 4, _pos, "> 0", "random draws per family and time scale"),
        "ratio_variation": Field(float, 0.2, _pos, "> 0", "allowed max-ratio variation above threshold"),
        "seed": DATA_FIELDS["seed"],
    },
}


def _line_of(text: str, key: str) -> Optional[int]:
    pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    return None


def _where(key, text, source):
    line = _line_of(text, key) if text else None
    return f"{source}:{line}: " if line else f"{source}: "


def _coerce(key: str, spec: Field, value, where: str):
    if spec.kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if spec.kind is int and isinstance(value, bool) or not isinstance(value, spec.kind):
        raise ConfigError(f"{where}field '{key}' must be of type {spec.kind.__name__}, got {value!r}")
    if spec.kind is float and not math.isfinite(value):
        raise ConfigError(f"{where}field '{key}' must be finite, got {value!r}")
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"{where}field '{key}' = {value!r} out of range: must be {spec.rule}")
    return value


def parse_override(item: str):
    """'key=value' with the value read as a TOML scalar (bare words become strings)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = (s.strip() for s in item.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def load_config(subcommand: str, text: str = "", source: str = "<config>",
                overrides: Optional[list] = None) -> dict:
    """Parse a flat TOML document, apply overrides, fill defaults and validate."""
    if subcommand not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    schema = SCHEMAS[subcommand]
    try:
        raw = tomllib.loads(text) if text else {}
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    origin = {k: _where(k, text, source) for k in raw}
    for item in overrides or []:
        k, v = parse_override(item)
        raw[k] = v
        origin[k] = "override: "
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        k = unknown[0]
        raise ConfigError(f"{origin[k]}unknown key '{k}' for {subcommand} "
                          f"(allowed: {', '.join(sorted(schema))})")
    out = {}
    for key, spec in schema.items():
        if key in raw:
            out[key] = _coerce(key, spec, raw[key], origin[key])
        elif spec.default is REQUIRED:
            raise ConfigError(f"{source}: missing required field '{key}' ({spec.doc})")
        else:
            out[key] = spec.default
    return out


def read_config(subcommand: str, path=None, overrides: Optional[list] = None) -> dict:
    text, source = "", "<defaults>"
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        source = str(path)
    return load_config(subcommand, text, source, overrides)


def schema_help(subcommand: str) -> str:
    lines = []
    for key, spec in SCHEMAS[subcommand].items():
        default = "required" if spec.default is REQUIRED else f"default {spec.default!r}"
        rule = f", {spec.rule}" if spec.rule else ""
        lines.append(f"  {key} ({spec.kind.__name__}, {default}{rule}): {spec.doc}")
    return "\n".join(lines)
