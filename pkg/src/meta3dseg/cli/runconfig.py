"""Run configuration: one JSON document, validated against ``SCHEMA`` before any work starts."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from ..learner import PRESETS, ArchitectureConfig
from ..training import SETTINGS, TrainConfig


class ConfigError(ValueError):
    pass


_POS_INT = {"type": "integer", "minimum": 1}
_INT_LIST = {"type": "array", "items": _POS_INT}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "meta3dseg run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": sorted(PRESETS)},
        "architecture": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "resolution", "conv_channels", "decoder_dims", "n_branches",
                         "latent_dim", "f1_hidden"],
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "resolution": {"type": "integer", "minimum": 2},
                "conv_channels": {**_INT_LIST, "minItems": 1},
                "decoder_dims": {**_INT_LIST, "minItems": 1},
                "n_branches": _POS_INT,
                "latent_dim": _POS_INT,
                "f1_hidden": _INT_LIST,
                "f2_hidden": _INT_LIST,
                "kernel": _POS_INT,
                "stride": _POS_INT,
                "padding": {"type": "integer", "minimum": 0},
                "weight_gain": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "finetune_learning_rate": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "meta_epochs": _POS_INT,
        "finetune_steps": {"type": "integer", "minimum": 0},
        "batch": _POS_INT,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "kl_weight": {"type": "number", "minimum": 0},
        "sampling": {"enum": ["stochastic", "deterministic"]},
        "task_points": _POS_INT,
        "setting": {"enum": sorted(SETTINGS)},
        "data": {"type": "string", "minLength": 1},
    },
}


def validate(doc: object) -> dict:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    return dict(doc)


def load(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return validate(doc)


def train_config(doc: dict) -> TrainConfig:
    fields = {k: v for k, v in doc.items() if k not in ("setting", "data", "architecture")}
    if "architecture" in doc:
        fields["architecture"] = ArchitectureConfig.from_dict(doc["architecture"])
    return TrainConfig(**fields)


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n"
