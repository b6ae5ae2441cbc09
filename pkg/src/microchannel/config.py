"""Experiment configuration: strict JSON with a versioned schema."""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import jsonschema

SCHEMA_VERSION = 1
EXPERIMENTS = ("modes", "free-channel", "reduction-check", "decoherence-sweep",
               "gibbs-fit", "feeding")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg_int = {"type": "integer", "minimum": 0}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_matrix = _obj({"dim": {"type": "integer", "minimum": 1},
                "re": {"type": "array", "items": {"type": "array", "items": _num}},
                "im": {"type": "array", "items": {"type": "array", "items": _num}}},
               ["dim", "re", "im"])

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "microchannel experiment configuration",
    **_obj({
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": list(EXPERIMENTS)},
        "output_dir": {"type": "string"},
        "seed": _nonneg_int,
        "n_modes": {"type": "integer", "minimum": 1},
        "grid": _obj({"length": _pos, "points": {"type": "integer", "minimum": 8}},
                     ["length", "points"]),
        "potential": _obj({
            "kind": {"enum": ["zero", "harmonic", "barrier", "tabulated"]},
            "k": _num, "center": _num, "height": _num, "a": _num, "b": _num,
            "values": {"type": "array", "items": _num}}, ["kind"]),
        "kernel": _obj({
            "kind": {"enum": ["contact", "gaussian", "tabulated"]},
            "g": _num, "range": _pos,
            "r": {"type": "array", "items": _num},
            "v": {"type": "array", "items": _num}}, ["kind"]),
        "fock": _obj({
            "statistics": {"enum": ["bose", "fermi"]},
            "cap": _nonneg_int, "n_max": _nonneg_int,
            "max_dim": {"type": "integer", "minimum": 1}}, ["statistics", "n_max"]),
        "channel_modes": {"type": "array", "items": _nonneg_int, "minItems": 1,
                          "uniqueItems": True},
        "couplings": _obj({"g_int": _num, "g_MB": _num, "g_MM": _num}),
        "bath": _obj({"kind": {"enum": ["vacuum", "gibbs", "particle"]},
                      "beta": _num, "mu": _num, "mode": _nonneg_int}, ["kind"]),
        "channel": _obj({
            "lambda": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "w": _obj({"source": {"enum": ["explicit", "random", "diagonal", "from-feeding"]},
                       "matrix": _matrix,
                       "populations": {"type": "array", "items": _num}}, ["source"])},
            ["lambda", "w"]),
        "time": _obj({"t0": _num, "t1": _num, "samples": {"type": "integer", "minimum": 2}},
                     ["t0", "t1", "samples"]),
        "sweep": _obj({"g_MB": {"type": "array", "items": _num, "minItems": 1}}, ["g_MB"]),
        "checks": _obj({"random_observables": {"type": "integer", "minimum": 1},
                        "pvm_cells": {"type": "integer", "minimum": 1}}),
        "gibbs": _obj({
            "observables": {"type": "array", "minItems": 1,
                            "items": {"type": "string",
                                      "pattern": r"^(N|H|H0|n:\d+|NM|hop:\d+:\d+)$"}},
            "targets": {"type": "array", "items": _num, "minItems": 1},
            "tol": _pos, "max_iter": {"type": "integer", "minimum": 1}},
            ["observables", "targets"]),
        "feeding": _obj({
            "kernel": {"type": "array", "items": {"type": "array", "items": _num}},
            "window": {"type": "number", "minimum": 0},
            "samples": {"type": "integer", "minimum": 1},
            "t1": _num}, ["kernel", "window", "samples"]),
    }, ["schema_version", "experiment", "n_modes", "grid", "potential"]),
}

REQUIRED_SECTIONS = {
    "modes": (),
    "free-channel": ("fock", "channel_modes", "channel", "time"),
    "reduction-check": ("fock", "channel_modes", "channel"),
    "decoherence-sweep": ("fock", "channel_modes", "channel", "time", "sweep"),
    "gibbs-fit": ("fock", "gibbs"),
    "feeding": ("fock", "channel_modes", "channel", "time", "feeding"),
}

DEFAULTS = {
    "seed": 0,
    "kernel": {"kind": "contact", "g": 1.0},
    "couplings": {"g_int": 1.0, "g_MB": 1.0, "g_MM": 1.0},
    "bath": {"kind": "vacuum"},
    "checks": {"random_observables": 20, "pvm_cells": 3},
}


class ConfigError(Exception):
    """Schema violation, carrying the 1-based line it points at."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _line_of(text: str, path) -> int | None:
    pos, line = 0, None
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line if line is not None else 1


def _describe(err) -> tuple[str, list]:
    path = list(err.absolute_path)
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            return f"unknown key {extra[0]!r} in {'/'.join(map(str, path)) or 'top level'}", \
                path + [extra[0]]
    if err.validator == "required":
        return f"{'/'.join(map(str, path)) or 'top level'}: {err.message}", path
    where = "/".join(map(str, path)) or "top level"
    return f"{where}: {err.message}", path


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    text: str = ""

    @property
    def experiment(self) -> str:
        return self.raw["experiment"]

    def section(self, name):
        return self.raw[name]

    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno) from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    # an unknown key is usually a misspelling that also explains a missing required one
    errors = sorted(validator.iter_errors(raw),
                    key=lambda e: (e.validator != "additionalProperties",
                                   list(map(str, e.absolute_path))))
    if errors:
        msg, path = _describe(errors[0])
        raise ConfigError(msg, _line_of(text, path))
    for name in REQUIRED_SECTIONS[raw["experiment"]]:
        if name not in raw:
            raise ConfigError(f"experiment {raw['experiment']!r} requires section {name!r}",
                              _line_of(text, ["experiment"]))
    merged = copy.deepcopy(raw)
    for key, value in DEFAULTS.items():
        if isinstance(value, dict):
            merged[key] = {**value, **raw.get(key, {})}
        else:
            merged.setdefault(key, value)
    n = raw["n_modes"]
    for r in raw.get("channel_modes", []):
        if r >= n:
            raise ConfigError(f"channel mode {r} outside 0..{n - 1}",
                              _line_of(text, ["channel_modes"]))
    if raw["n_modes"] > raw["grid"]["points"]:
        raise ConfigError("n_modes exceeds the number of grid points", _line_of(text, ["n_modes"]))
    return ExperimentConfig(merged, text)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
