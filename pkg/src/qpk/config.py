"""Experiment configuration: bundled defaults, JSON schemas and flag overrides."""

from __future__ import annotations

import json
from importlib import resources

import jsonschema

SUBCOMMANDS = ("simulate", "attack-sweep", "verify-theorem", "oracle-check", "calibrate")

_seed = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_phase = {"type": "number"}
_session = {
    "r": {"type": "number", "minimum": -10, "maximum": 10},
    "alice_phases": {"type": "array", "items": _phase, "minItems": 1},
    "shots": {"type": "integer", "minimum": 100},
    "redundancy": {"type": "integer", "minimum": 1},
    "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "seed": _seed,
    "key_seed": _seed,
    "attack": {"type": "string"},
}

_message = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "mode": {"const": "analog"},
                "positions": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                          "exclusiveMaximum": 1}, "minItems": 1},
            },
            "required": ["mode", "positions"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "mode": {"const": "analog"},
                "values": {"type": "array", "items": _phase, "minItems": 1},
                "window": {"type": "array", "items": _phase, "minItems": 2, "maxItems": 2},
            },
            "required": ["mode", "values", "window"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "mode": {"const": "digital"},
                "bits": {"type": "string", "pattern": "^[01]+$"},
                "bit_deltas": {"type": "array", "items": _phase, "minItems": 2, "maxItems": 2},
                "bit_map": {"type": "array", "items": _phase, "minItems": 2, "maxItems": 2},
            },
            "required": ["mode", "bits"],
            "not": {"required": ["bit_deltas", "bit_map"]},
            "additionalProperties": False,
        },
    ]
}


def _schema(properties: dict) -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": properties,
        "required": sorted(properties),
        "additionalProperties": False,
    }


SCHEMAS = {
    "simulate": _schema({
        **_session,
        "message": _message,
        "eve_strategy": {"enum": ["correlation", "exhaustive-theta_b-scan"]},
    }),
    "attack-sweep": _schema({
        **_session,
        "sessions": {"type": "integer", "minimum": 1},
        "symbols": {"type": "integer", "minimum": 1},
        "parameter": {"type": "string"},
        "values": {"type": "array", "items": {"type": "number"}},
    }),
    "verify-theorem": _schema({
        "r": {"type": "number", "exclusiveMinimum": 0, "maximum": 3},
        "theta_a": _phase,
        "theta_b_points": {"type": "integer", "minimum": 1},
        "cutoff": {"type": ["integer", "null"], "minimum": 2, "maximum": 256},
        "attack_cutoff": {"type": ["integer", "null"], "minimum": 2, "maximum": 256},
        "ancilla_dim": {"type": "integer", "minimum": 2, "maximum": 32},
        "floor": {"type": "number", "exclusiveMinimum": 0},
        "seed": _seed,
    }),
    "oracle-check": _schema({
        "r_values": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 3}, "minItems": 1},
        "cutoff": {"type": "integer", "minimum": 2, "maximum": 256},
        "theta_a": _phase,
        "theta_b": _phase,
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "seed": _seed,
    }),
    "calibrate": _schema({
        **_session,
        "sessions": {"type": "integer", "minimum": 1},
        "symbols": {"type": "integer", "minimum": 1},
        "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    }),
}


def default_config(subcommand: str) -> dict:
    text = resources.files("qpk").joinpath("data", f"{subcommand}.json").read_text()
    return json.loads(text)


def validate(subcommand: str, config: dict) -> dict:
    """Raise :class:`jsonschema.ValidationError` unless ``config`` fits the subcommand's schema."""
    jsonschema.validate(config, SCHEMAS[subcommand])
    return config


def load_config(subcommand: str, path=None, overrides: dict | None = None) -> dict:
    """Defaults, then keys from the file at ``path``, then non-``None`` flag overrides.

    The file may be partial; unknown keys anywhere are rejected.
    """
    if subcommand not in SCHEMAS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    config = default_config(subcommand)
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = sorted(set(user) - set(SCHEMAS[subcommand]["properties"]))
        if unknown:
            raise ValueError(f"unknown config keys for {subcommand}: {unknown}")
        config.update(user)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in config:
            raise ValueError(f"--{key} does not apply to {subcommand}")
        config[key] = value
    return validate(subcommand, config)
