"""Run configuration: dataclasses, JSON schema, parsing and serialization."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import jsonschema

from .graph import NoiseSpec

MODEL_MODES = ("ppgnn", "ppgnn_anchor", "gcn", "mlp")
MODE_ALIASES = {"gcn_baseline": "gcn", "mlp_baseline": "mlp", "node_node": "ppgnn", "anchor": "ppgnn_anchor"}


class ConfigError(ValueError):
    pass


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODEL_MODES:
        raise ConfigError(f"unknown model mode {mode!r}; expected one of {MODEL_MODES}")
    return mode


@dataclass(frozen=True)
class TrainConfig:
    model: str = "ppgnn"
    learning_rate: float = 5e-3
    max_epochs: int = 300
    patience: int = 50
    k: int = 4
    num_anchors: int | None = None
    seed: int = 0
    eval_mode: str = "deterministic"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    dropout: float = 0.0
    hidden: int = 64
    num_layers: int = 3
    embed_hidden: int = 64
    embed_dim: int = 32
    embed_graph_conv: bool = False
    record_wall_ms: bool = False

    def __post_init__(self):
        object.__setattr__(self, "model", canonical_mode(self.model))
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        for name in ("max_epochs", "patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("k", "hidden", "num_layers", "embed_hidden", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.num_anchors is not None and self.num_anchors < 1:
            raise ConfigError("num_anchors must be at least 1")
        if self.eval_mode not in ("deterministic", "stochastic"):
            raise ConfigError("eval_mode must be 'deterministic' or 'stochastic'")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def learns_graph(self) -> bool:
        return self.model in ("ppgnn", "ppgnn_anchor")


@dataclass(frozen=True)
class SbmSpec:
    num_nodes: int = 200
    num_blocks: int = 4
    p_in: float = 0.2
    p_out: float = 0.01
    feat_dim: int = 16
    feat_noise: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str | None = None
    sbm: SbmSpec | None = None
    noise: NoiseSpec | None = None
    num_runs: int = 5
    out: str = "runs"

    def __post_init__(self):
        if (self.dataset is None) == (self.sbm is None):
            raise ConfigError("exactly one of 'dataset' and 'sbm' must be given")
        if self.num_runs < 1:
            raise ConfigError("num_runs must be at least 1")

    @property
    def model(self) -> str:
        return self.train.model

    def with_train(self, **changes) -> ExperimentConfig:
        return replace(self, train=replace(self.train, **changes))


_TRAIN_PROPS = {
    "model": {"type": "string", "enum": list(MODEL_MODES) + list(MODE_ALIASES)},
    "learning_rate": {"type": "number", "exclusiveMinimum": 0},
    "max_epochs": {"type": "integer", "minimum": 0},
    "patience": {"type": "integer", "minimum": 0},
    "k": {"type": "integer", "minimum": 1},
    "num_anchors": {"type": ["integer", "null"], "minimum": 1},
    "seed": {"type": "integer", "minimum": 0},
    "eval_mode": {"type": "string", "enum": ["deterministic", "stochastic"]},
    "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "epsilon": {"type": "number", "exclusiveMinimum": 0},
    "weight_decay": {"type": "number", "minimum": 0},
    "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "hidden": {"type": "integer", "minimum": 1},
    "num_layers": {"type": "integer", "minimum": 1},
    "embed_hidden": {"type": "integer", "minimum": 1},
    "embed_dim": {"type": "integer", "minimum": 1},
    "embed_graph_conv": {"type": "boolean"},
    "record_wall_ms": {"type": "boolean"},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dataset": {"type": ["string", "null"]},
        "sbm": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "properties": {
                "num_nodes": {"type": "integer", "minimum": 1},
                "num_blocks": {"type": "integer", "minimum": 1},
                "p_in": {"type": "number", "minimum": 0, "maximum": 1},
                "p_out": {"type": "number", "minimum": 0, "maximum": 1},
                "feat_dim": {"type": "integer", "minimum": 1},
                "feat_noise": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "noise": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["mode", "ratio"],
            "properties": {
                "mode": {"type": "string", "enum": ["add", "delete"]},
                "ratio": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "num_runs": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "train": {"type": "object", "additionalProperties": False, "properties": _TRAIN_PROPS},
    },
}


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    sbm = raw.get("sbm")
    noise = raw.get("noise")
    try:
        return ExperimentConfig(
            train=TrainConfig(**raw.get("train", {})),
            dataset=raw.get("dataset"),
            sbm=SbmSpec(**sbm) if sbm is not None else None,
            noise=NoiseSpec(**noise) if noise is not None else None,
            num_runs=raw.get("num_runs", 5),
            out=raw.get("out", "runs"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return {
        "dataset": cfg.dataset,
        "sbm": asdict(cfg.sbm) if cfg.sbm is not None else None,
        "noise": asdict(cfg.noise) if cfg.noise is not None else None,
        "num_runs": cfg.num_runs,
        "out": cfg.out,
        "train": {f.name: getattr(cfg.train, f.name) for f in fields(TrainConfig)},
    }


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return config_from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
