"""Run configuration: strict JSON schema and conversion to model objects."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .expr import ParseError, parse_expression
from .geometry import domain_from_config
from .model import ProblemSpec
from .pathsim import PathConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_expr = {"type": "string", "minLength": 1}
_vec = {"type": "array", "items": _num, "minItems": 1}
_points = {"type": "array", "items": _vec, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_domain = {
    "oneOf": [
        _obj({"type": {"const": "ball"}, "center": _vec, "radius": _pos}, ["type", "center", "radius"]),
        _obj({"type": {"const": "box"}, "lo": _vec, "hi": _vec}, ["type", "lo", "hi"]),
        _obj({"type": {"const": "polytope"},
              "halfspaces": {"type": "array", "minItems": 2,
                             "items": _obj({"normal": _vec, "offset": _num}, ["normal", "offset"])}},
             ["type", "halfspaces"]),
    ]
}

_problem = _obj({
    "dim": _int_pos,
    "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
    "a": {"type": "number", "minimum": 0},
    "sigma": {"enum": [0, 1]},
    "domain": _domain,
    "b": {"type": "array", "items": _expr, "minItems": 1},
    "c": _expr, "f": _expr, "g": _expr,
    "g_bound": {"type": ["number", "null"], "minimum": 0},
    "kato_warn_threshold": _pos,
    "kato_p": {"type": ["number", "null"], "exclusiveMinimum": 0},
}, ["dim", "domain"])

_numerics = _obj({
    "dt": _pos, "t_max": _pos, "hit_tol": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "n_paths": {"type": "integer", "minimum": 2}, "h": _pos, "points": _points,
}, ["dt", "n_paths"])

_verify = _obj({
    "candidate_csv": {"type": "string", "minLength": 1},
    "candidate_expr": _expr,
    "h": _pos, "dt": {"type": "number", "minimum": 0}, "C": _pos,
    "h_q": _pos, "delta": _pos, "R": _pos,
    "bumps": {"type": "array", "minItems": 1, "items": _obj({"center": _vec, "width": _pos}, ["center", "width"])},
})

_diagnose = _obj({
    "validate": {"type": "boolean"},
    "kato": _obj({"radii": {"type": "array", "items": _pos, "minItems": 1}, "lattice_h": _pos,
                  "field": {"enum": ["c", "f"]}}, ["radii", "lattice_h"]),
    "density": _obj({"t": _pos, "x0": _vec, "n": _int_pos, "dt": _pos, "min_count": _int_pos,
                     "control": {"type": "boolean"}}, ["t"]),
    "exit": _obj({"x": _vec, "n": _int_pos, "t_min": {"type": "number", "minimum": 0},
                  "calibrate_t_max": {"type": "boolean"}}, ["x"]),
    "displacement": _obj({"r": _pos, "times": {"type": "array", "items": _pos, "minItems": 1},
                          "n": _int_pos, "starts": _points}, ["r", "times"]),
    "occupation": _obj({"v": _expr, "x": _vec, "n": _int_pos}, ["v", "x"]),
    "continuity": _obj({"z": _vec, "radii": {"type": "array", "items": _pos, "minItems": 1}, "n": _int_pos,
                        "oracle": _expr, "tol": {"type": "number", "minimum": 0}}, ["z", "radii"]),
})

_oracle = _obj({"dt": _pos, "n_paths": {"type": "integer", "minimum": 2},
                "only": {"type": "array", "items": {"type": "string"}}})

SCHEMA = _obj({
    "problem": _problem,
    "numerics": _numerics,
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "threads": _int_pos,
    "output": _obj({"dir": {"type": "string", "minLength": 1}, "trace": {"type": "boolean"}}),
    "verify": _verify,
    "diagnose": _diagnose,
    "oracle": _oracle,
    "comment": {"type": "string"},
})

DEFAULTS = {"seed": 0, "numerics": {"t_max": 20.0}}


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate_config(cfg: dict) -> None:
    """Raise :class:`ConfigError` naming the first offending key path."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    # unknown keys first: a typo also shows up as a missing required key
    errors = sorted(validator.iter_errors(cfg),
                    key=lambda e: (e.validator != "additionalProperties", len(list(e.absolute_path)), _path(e)))
    if not errors:
        return
    err = errors[0]
    # unknown keys: name the key itself, not only its parent
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        base = _path(err)
        keys = [k if base == "<root>" else f"{base}.{k}" for k in extra]
        raise ConfigError(f"unknown key {', '.join(keys)}")
    if err.validator == "oneOf" and isinstance(err.instance, dict):
        best = jsonschema.exceptions.best_match(err.context) if err.context else err
        raise ConfigError(f"{_path(err)}: {best.message}")
    raise ConfigError(f"{_path(err)}: {err.message}")


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    validate_config(cfg)
    return cfg


def with_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(cfg)
    out.setdefault("seed", DEFAULTS["seed"])
    if "numerics" in out:
        for k, v in DEFAULTS["numerics"].items():
            out["numerics"].setdefault(k, v)
    return out


def problem_from_config(pc: dict) -> ProblemSpec:
    d = pc["dim"]
    try:
        dom = domain_from_config(pc["domain"])
    except ValueError as exc:
        raise ConfigError(f"problem.domain: {exc}") from exc
    if dom.dim != d:
        raise ConfigError(f"problem.domain: dimension {dom.dim} does not match dim = {d}")
    # parse the fields here so the error names the key path
    fields = [(k, pc[k]) for k in ("c", "f", "g") if isinstance(pc.get(k), str)]
    if isinstance(pc.get("b"), list):
        fields += [(f"b.{i}", e) for i, e in enumerate(pc["b"]) if isinstance(e, str)]
    for key, text in fields:
        try:
            parse_expression(text, d)
        except ParseError as exc:
            raise ConfigError(f"problem.{key}: {exc}") from exc
    kw = {k: pc[k] for k in ("alpha", "a", "sigma", "b", "c", "f", "g", "g_bound", "kato_warn_threshold", "kato_p")
          if k in pc}
    try:
        return ProblemSpec(domain=dom, **kw)
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"problem: {exc}") from exc


def path_config_from(nc: dict, record_trace: bool = False) -> PathConfig:
    try:
        return PathConfig(dt=nc["dt"], t_max=nc.get("t_max", DEFAULTS["numerics"]["t_max"]),
                          hit_tol=nc.get("hit_tol"), record_trace=record_trace)
    except ValueError as exc:
        raise ConfigError(f"numerics: {exc}") from exc


__all__ = ["SCHEMA", "ConfigError", "validate_config", "load_config", "with_defaults", "problem_from_config",
           "path_config_from"]
