"""Run configuration: JSON schema, defaults and resolution."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .ensemble import NOISE_PALETTE
from .system import PRESETS

__all__ = ["ConfigError", "SCHEMA", "defaults_for", "resolve", "parse_config"]


class ConfigError(ValueError):
    pass


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

SCHEMA = _obj({
    "preset": {"enum": sorted(PRESETS)},
    "dataset": _obj({
        "n_traj": _pos_int,
        "n_steps": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer"},
        "rtol": _pos_num,
        "atol": _pos_num,
        "n_collocation": _pos_int,
        "labeled_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "holdout_traj": _pos_int,
        "holdout_seed": {"type": "integer"},
    }),
    "train": _obj({
        "learning_rate": _pos_num,
        "iterations": _pos_int,
        "physics_batch": _pos_int,
        "data_batch": _pos_int,
        "seed": {"type": "integer"},
        "lambda_u": _nonneg,
        "lambda_f": _nonneg,
    }),
    "ensemble": _obj({
        "n_members": _pos_int,
        "master_seed": {"type": "integer"},
        "confidence_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "noise_palette": {"type": "array", "items": _nonneg, "minItems": 1},
        "jobs": _pos_int,
    }),
    "output": _obj({"dir": {"type": "string"}}),
})

_MEMBERS = {"1bus": 6, "2bus": 3}


def defaults_for(preset: str) -> dict:
    return {
        "preset": preset,
        "dataset": {
            "n_traj": 100,
            "n_steps": 201,
            "seed": 0,
            "rtol": 1e-8,
            "atol": 1e-10,
            "n_collocation": 9000,
            "labeled_fraction": 0.25,
            "holdout_traj": 10,
            "holdout_seed": 12345,
        },
        "train": {
            "learning_rate": 1e-3,
            "iterations": 20000,
            "physics_batch": 512,
            "data_batch": 256,
            "seed": 0,
            "lambda_u": 1.0,
            "lambda_f": 1.0,
        },
        "ensemble": {
            "n_members": _MEMBERS[preset],
            "master_seed": 0,
            "confidence_level": 0.95,
            "noise_palette": list(NOISE_PALETTE),
            "jobs": 1,
        },
        "output": {"dir": "."},
    }


def _validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path)
        if not where and exc.validator == "additionalProperties":
            where = "top level"
        raise ConfigError(f"invalid config at {where or 'top level'!s}: {exc.message}") from None


def resolve(doc: dict | None = None, overrides: dict | None = None) -> dict:
    """Validate ``doc``, apply ``overrides`` and fill every default."""
    doc = copy.deepcopy(doc or {})
    _validate(doc)
    for section, values in (overrides or {}).items():
        if isinstance(values, dict):
            doc.setdefault(section, {}).update(values)
        else:
            doc[section] = values
    _validate(doc)
    resolved = defaults_for(doc.get("preset", "1bus"))
    for section, values in doc.items():
        if isinstance(values, dict):
            resolved[section].update(values)
        else:
            resolved[section] = values
    t = resolved["train"]
    if t["lambda_u"] == 0 and t["lambda_f"] == 0:
        raise ConfigError("invalid config at train: lambda_u and lambda_f cannot both be 0")
    return resolved


def parse_config(path, overrides: dict | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return resolve(doc, overrides)
