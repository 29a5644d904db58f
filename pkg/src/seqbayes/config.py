"""Experiment configuration: loading, overrides, defaults and validation.

A configuration file is YAML (JSON is accepted as a subset). With a
top-level ``scenario`` key the file is deep-merged onto that built-in
scenario; without it the file must be complete. Covariance diagonals may be
written as comma-separated strings of scientific-notation numbers, e.g.
``"1e-9, 1e-9, 1e-14"``.
"""

from __future__ import annotations

import copy
import json
import re

import jsonschema
import yaml

from .benchmark import COEFF_NAMES, scenario
from .errors import ConfigError
from .runner import FILTER_IDS

SCENARIOS = ("state", "state_parameter", "input_state_parameter")

_NUM_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

_UT = {"alpha": 1.0, "beta": 2.0, "kappa": None, "redraw_sigma_points": True}
_PF = {"resample_threshold": 0.2, "resample_scheme": "systematic"}

FILTER_DEFAULTS = {
    "ukf": dict(_UT),
    "pf": dict(_PF),
    "sppf": {**_UT, **_PF, "simplified_weights": False},
    "mpf": {**_PF, "resample_threshold": 0.3, "p_r": 0.05, "p_m": 0.25, "radius": 0.2},
    "rbpf": {**_UT, **_PF, "partition": {"a_indices": [6]}},
    "gmsppf": {
        **_UT,
        "G_s": 1,
        "G_p": 1,
        "G_m": 1,
        "em": {"max_iters": 20, "tol": 1e-6, "cov_floor": 1e-10},
    },
    "dkf": {**_UT, "input_init_mean": 0.0, "input_update": "auto"},
}

_ESTIMATION_DEFAULTS = {"min_log_likelihood": None, "burn_in": 0.2}


def _obj(props, required=()):
    return {
        "type": "object",
        "properties": props,
        "required": list(required),
        "additionalProperties": False,
    }


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_INT1 = {"type": "integer", "minimum": 1}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_COV = {
    "oneOf": [
        _NONNEG,
        {"type": "array", "items": _NONNEG, "minItems": 1},
        {"type": "array", "items": _VEC, "minItems": 1},
    ]
}
_DOFS = {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 3}}

_UT_PROPS = {
    "alpha": _POS,
    "beta": _NUM,
    "kappa": {"type": ["number", "null"]},
    "redraw_sigma_points": {"type": "boolean"},
}
_PF_PROPS = {
    "particles": _INT1,
    "resample_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "resample_scheme": {"enum": ["systematic", "multinomial"]},
}
_R = {"measurement_cov": _COV}

_FILTER_SCHEMAS = {
    "ukf": _obj({**_R, **_UT_PROPS}, ["measurement_cov"]),
    "pf": _obj({**_R, **_PF_PROPS}, ["measurement_cov", "particles"]),
    "sppf": _obj(
        {**_R, **_UT_PROPS, **_PF_PROPS, "simplified_weights": {"type": "boolean"}},
        ["measurement_cov", "particles"],
    ),
    "mpf": _obj(
        {**_R, **_PF_PROPS, "p_r": _PROB, "p_m": _PROB, "radius": _NONNEG},
        ["measurement_cov", "particles"],
    ),
    "rbpf": _obj(
        {
            **_R,
            **_UT_PROPS,
            **_PF_PROPS,
            "partition": _obj(
                {"a_indices": {"type": "array", "items": {"type": "integer", "minimum": 0},
                               "minItems": 1}},
                ["a_indices"],
            ),
        },
        ["measurement_cov", "particles"],
    ),
    "gmsppf": _obj(
        {
            **_R,
            **_UT_PROPS,
            "particles": _INT1,
            "G_s": _INT1,
            "G_p": _INT1,
            "G_m": _INT1,
            "em": _obj({"max_iters": _INT1, "tol": _NONNEG, "cov_floor": _NONNEG}),
        },
        ["measurement_cov", "particles"],
    ),
    "dkf": _obj(
        {
            **_R,
            **_UT_PROPS,
            "input_cov": _COV,
            "input_init_cov": _COV,
            "input_init_mean": _NUM,
            "input_update": {"enum": ["auto", "linear", "unscented"]},
        },
        ["measurement_cov", "input_cov", "input_init_cov"],
    ),
}

SCHEMA = _obj(
    {
        "scenario": {"enum": list(SCENARIOS)},
        "model": _obj(
            {
                "params": _obj({n: _NONNEG for n in COEFF_NAMES}, COEFF_NAMES),
                "dt": _POS,
                "horizon": _POS,
                "force": _obj(
                    {"std": _NONNEG, "hold": _INT1, "dofs": {**_DOFS, "minItems": 1}},
                    ["std"],
                ),
            },
            ["params", "dt", "horizon", "force"],
        ),
        "measurement": _obj(
            {
                "displacement_dofs": _DOFS,
                "accel_channels": _DOFS,
                "noise_fraction": _NONNEG,
            },
            ["displacement_dofs", "accel_channels", "noise_fraction"],
        ),
        "estimation": _obj(
            {
                "case": {"enum": list(SCENARIOS)},
                "initial_mean": _VEC,
                "initial_cov": _COV,
                "process_cov": _COV,
                "parameter": _obj(
                    {"name": {"enum": ["kc"]}, "scale": _POS, "initial": _NUM},
                    ["name", "scale", "initial"],
                ),
                "min_log_likelihood": {
                    "oneOf": [{"type": "null"}, _NUM, {"const": "underflow"}]
                },
                "burn_in": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
            ["case", "initial_mean", "initial_cov", "process_cov"],
        ),
        "filters": _obj(_FILTER_SCHEMAS),
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "output": _obj({"dir": {"type": ["string", "null"]}}),
    },
    ["model", "measurement", "estimation", "filters", "seeds"],
)


def coerce(value):
    """Turn numeric strings and comma-separated numeric lists into numbers."""
    if isinstance(value, dict):
        return {k: coerce(v) for k, v in value.items()}
    if isinstance(value, list):
        return [coerce(v) for v in value]
    if isinstance(value, str):
        s = value.strip()
        if _NUM_RE.match(s):
            f = float(s)
            return int(s) if re.fullmatch(r"[+-]?\d+", s) else f
        if "," in s:
            parts = [p.strip() for p in s.strip("[]").split(",")]
            if parts and all(_NUM_RE.match(p) for p in parts):
                return [float(p) for p in parts]
    return value


def deep_merge(base, update):
    """Recursive dict merge; ``update`` wins and lists are replaced whole."""
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text):
    """``'a.b.c=value'`` -> ``(['a', 'b', 'c'], value)`` with YAML-typed value."""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected key.path=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {text!r}: empty key path")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: cannot parse value {raw!r}: {exc}") from None
    return path, coerce(value)


def apply_override(cfg, path, value):
    """Set ``cfg[path]``; a leading filter id is shorthand for ``filters.<id>``."""
    if path[0] in FILTER_IDS and path[0] not in cfg:
        path = ["filters"] + path
    node = cfg
    for i, key in enumerate(path[:-1]):
        nxt = node.get(key)
        if nxt is None:
            nxt = node[key] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {'.'.join(path)}: {'.'.join(path[: i + 1])} is not a section")
        node = nxt
    node[path[-1]] = value
    return cfg


def _fmt_path(err):
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def validate(cfg):
    """Raise `ConfigError` listing every schema violation as ``path: message``."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errs:
        lines = []
        for e in errs:
            if e.validator == "required":
                missing = re.findall(r"'([^']+)' is a required property", e.message)
                field = ".".join([*map(str, e.absolute_path), *missing])
                lines.append(f"{field}: required field is missing")
            else:
                lines.append(f"{_fmt_path(e)}: {e.message}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    est = cfg["estimation"]
    if est["case"] != "state" and "parameter" not in est:
        raise ConfigError("estimation.parameter: required for parameter-estimation cases")
    if est["case"] == "input_state_parameter" and "dkf" not in cfg["filters"]:
        raise ConfigError("filters.dkf: required for the input_state_parameter case")
    return cfg


def materialize(cfg):
    """Fill every optional field with its default."""
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("output", {"dir": None})
    f = cfg["model"]["force"]
    f.setdefault("hold", 1)
    f.setdefault("dofs", [2])
    cfg["estimation"] = deep_merge(_ESTIMATION_DEFAULTS, cfg["estimation"])
    cfg["filters"] = {
        fid: deep_merge(FILTER_DEFAULTS[fid], sec) if isinstance(sec, dict) else sec
        for fid, sec in cfg["filters"].items()
    }
    return cfg


def resolve(raw, overrides=()):
    """Merge, override, default-fill and validate a raw configuration mapping."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    raw = coerce(raw)
    name = raw.get("scenario")
    if name is not None:
        if name not in SCENARIOS:
            raise ConfigError(f"scenario: unknown scenario {name!r}; known: {', '.join(SCENARIOS)}")
        cfg = deep_merge(scenario(name), raw)
    else:
        cfg = copy.deepcopy(raw)
    for ov in overrides:
        path, value = parse_override(ov) if isinstance(ov, str) else ov
        apply_override(cfg, path, value)
    if isinstance(cfg.get("filters"), dict):
        cfg["filters"] = {k: v for k, v in cfg["filters"].items() if v is not None}
    validate(cfg)
    return materialize(cfg)


def load_config(path=None, overrides=(), scenario_name=None):
    """Read and resolve a configuration file (or a built-in scenario)."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if scenario_name is not None:
        raw = dict(raw or {})
        raw.setdefault("scenario", scenario_name)
    if path is None and scenario_name is None:
        raise ConfigError("no configuration given: pass --config or --scenario")
    return resolve(raw, overrides)


def dumps(cfg):
    """Canonical JSON text of a resolved configuration."""
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


__all__ = [
    "SCHEMA",
    "FILTER_DEFAULTS",
    "coerce",
    "deep_merge",
    "parse_override",
    "apply_override",
    "validate",
    "materialize",
    "resolve",
    "load_config",
    "dumps",
]
