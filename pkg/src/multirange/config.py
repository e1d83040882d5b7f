"""Flat dotted-key JSON configuration with named presets.

Unknown keys are rejected (typo protection). Presets capture the documented
operating points and can be overridden by explicit keys.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


class ConfigError(ValueError):
    """Invalid configuration document or value."""


@dataclass
class Config:
    # model
    task: str = "mcq"
    dim: int = 128
    compare: str = "submultnn"
    max_span_len: int = 15
    biattention: str = "full"
    lexical_features: bool = True
    pointer_kind: str = "auto"
    # encoder
    encoder_kind: str = "mru"
    encoder_variant: str = "auto"
    encoder_width: int = 0
    ranges: tuple[int, ...] = (1, 2, 4, 10, 25)
    bidirectional: bool = False
    bias_inside: bool = False
    raw_output_gate: bool = False
    apply_to_query: bool = False
    # training
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    patience: int = 10
    dropout: float = 0.1
    seed: int = 13
    max_len: int = 0  # 0 disables truncation
    dtype: str = "fp32"
    target_metric: str = ""
    target_value: float = 0.0
    checkpoint_path: str = "model.mrcp"
    # data
    train_path: str = ""
    dev_path: str = ""
    embeddings_path: str = ""
    d_emb: int = 64
    frozen_embeddings: bool = True
    use_idf: bool = False
    respan_with_rouge: bool = False


# dotted JSON key -> dataclass attribute
KEYMAP = {
    "model.task": "task",
    "model.dim": "dim",
    "model.compare": "compare",
    "model.max_span_len": "max_span_len",
    "model.biattention": "biattention",
    "model.lexical_features": "lexical_features",
    "model.pointer_kind": "pointer_kind",
    "encoder.kind": "encoder_kind",
    "encoder.variant": "encoder_variant",
    "encoder.width": "encoder_width",
    "encoder.ranges": "ranges",
    "encoder.bidirectional": "bidirectional",
    "encoder.bias_inside": "bias_inside",
    "encoder.raw_output_gate": "raw_output_gate",
    "encoder.apply_to_query": "apply_to_query",
    "train.lr": "lr",
    "train.batch_size": "batch_size",
    "train.epochs": "epochs",
    "train.patience": "patience",
    "train.dropout": "dropout",
    "train.seed": "seed",
    "train.max_len": "max_len",
    "train.dtype": "dtype",
    "train.target_metric": "target_metric",
    "train.target_value": "target_value",
    "train.checkpoint_path": "checkpoint_path",
    "data.train_path": "train_path",
    "data.dev_path": "dev_path",
    "data.embeddings_path": "embeddings_path",
    "data.d_emb": "d_emb",
    "data.frozen_embeddings": "frozen_embeddings",
    "data.use_idf": "use_idf",
    "data.respan_with_rouge": "respan_with_rouge",
}
_ATTR_TO_KEY = {attr: key for key, attr in KEYMAP.items()}

PRESETS = {
    # documented operating points, applied to synthetic tasks at reduced scale
    "race-like": {
        "model.task": "mcq", "encoder.kind": "simple_mru",
        "encoder.ranges": [1, 2, 4, 10, 25],
        "train.lr": 0.0003, "train.batch_size": 64, "train.max_len": 500,
        "train.dropout": 0.1, "model.dim": 250, "data.d_emb": 300,
    },
    "searchqa-like": {
        "model.task": "span", "encoder.kind": "mru",
        "encoder.ranges": [1, 2, 4, 10, 25],
        "train.lr": 0.001, "train.batch_size": 256, "train.max_len": 200,
        "train.dropout": 0.1, "model.dim": 250, "data.d_emb": 300,
    },
    "narrativeqa-like": {
        "model.task": "span", "encoder.kind": "mru",
        "encoder.ranges": [1, 2, 4, 10, 25],
        "train.lr": 0.001, "train.batch_size": 32, "train.max_len": 1100,
        "train.dropout": 0.1, "model.dim": 250, "data.d_emb": 300,
        "data.respan_with_rouge": True,
    },
}


def _coerce(key: str, attr: str, value):
    if attr == "ranges":
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(f"{key}: expected a non-empty list of integers")
        try:
            return tuple(int(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected integers, got {value!r}") from None
    current = getattr(Config(), attr)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(current, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def _validate(cfg: Config) -> Config:
    from .rnn import ENCODER_KINDS  # local import avoids a cycle

    def want(key, cond, msg):
        if not cond:
            raise ConfigError(f"{_ATTR_TO_KEY.get(key, key)}: {msg}")

    want("task", cfg.task in ("mcq", "span"), f"must be mcq or span, got {cfg.task!r}")
    want("dim", cfg.dim >= 1, "must be >= 1")
    want("compare", cfg.compare in ("submultnn", "mult"),
         f"must be submultnn or mult, got {cfg.compare!r}")
    want("max_span_len", cfg.max_span_len >= 1, "must be >= 1")
    want("biattention", cfg.biattention in ("full", "pooled"),
         f"must be full or pooled, got {cfg.biattention!r}")
    want("encoder_kind", cfg.encoder_kind in ENCODER_KINDS,
         f"must be one of {ENCODER_KINDS}, got {cfg.encoder_kind!r}")
    want("encoder_variant", cfg.encoder_variant in ("auto", "simple", "recurrent"),
         f"must be auto, simple or recurrent, got {cfg.encoder_variant!r}")
    want("pointer_kind", cfg.pointer_kind == "auto" or cfg.pointer_kind in ENCODER_KINDS,
         f"must be auto or an encoder kind, got {cfg.pointer_kind!r}")
    want("encoder_width", cfg.encoder_width >= 0, "must be >= 0")
    want("ranges", len(cfg.ranges) > 0, "must be non-empty")
    want("ranges", all(r >= 1 for r in cfg.ranges), "entries must be >= 1")
    want("ranges", all(b > a for a, b in zip(cfg.ranges, cfg.ranges[1:])),
         "must be strictly increasing")
    want("lr", cfg.lr > 0, "must be positive")
    want("batch_size", cfg.batch_size >= 1, "must be >= 1")
    want("epochs", cfg.epochs >= 1, "must be >= 1")
    want("patience", cfg.patience >= 0, "must be >= 0")
    want("dropout", 0.0 <= cfg.dropout < 1.0, "must be in [0, 1)")
    want("max_len", cfg.max_len >= 0, "must be >= 0")
    want("dtype", cfg.dtype in ("fp32", "fp64"), f"must be fp32 or fp64, got {cfg.dtype!r}")
    want("d_emb", cfg.d_emb >= 1, "must be >= 1")
    # reconcile encoder.variant with encoder.kind
    if cfg.encoder_variant != "auto":
        if cfg.encoder_kind in ("simple_mru", "mru"):
            cfg.encoder_kind = "simple_mru" if cfg.encoder_variant == "simple" else "mru"
        else:
            raise ConfigError(
                f"encoder.variant={cfg.encoder_variant!r} only applies to multi-range "
                f"encoder kinds, not {cfg.encoder_kind!r}")
        cfg.encoder_variant = "auto"
    return cfg


def parse_config(doc: dict, preset: str | None = None) -> Config:
    """Build a validated Config from a flat dotted-key mapping; explicit keys
    override preset values."""
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        merged = dict(PRESETS[preset])
        merged.update(doc)
        doc = merged
    cfg = Config()
    unknown = sorted(set(doc) - set(KEYMAP))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in doc.items():
        attr = KEYMAP[key]
        setattr(cfg, attr, _coerce(key, attr, value))
    return _validate(cfg)


def load_config(path: str, preset: str | None = None) -> Config:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return parse_config(doc, preset)


def config_to_dict(cfg: Config) -> dict:
    """Dotted-key echo of a config (checkpoint manifests, logs)."""
    out = {}
    for key, attr in KEYMAP.items():
        v = getattr(cfg, attr)
        out[key] = list(v) if isinstance(v, tuple) else v
    return out
