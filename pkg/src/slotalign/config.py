"""Run configuration shared by the model, trainer and CLI."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Model architecture and optimization settings.

    Learning rates default to toy-scale values (1e-3). The large-scale
    presets (3e-5 for the utterance encoder, 1e-4 elsewhere, sequence
    length 512) are available from :meth:`paper_hparams`.
    """

    seed: int = 0
    epochs: int = 30
    batch_size: int = 16
    peak_lr_encoder: float = 1e-3
    peak_lr_rest: float = 1e-3
    warmup_proportion: float = 0.1
    max_seq_len: int = 512
    max_turns: int = 24
    d: int = 64
    heads: int = 4
    align_heads: int = 4
    encoder_layers: int = 2
    schema_layers: int = 1
    n_slot_sa: int = 4
    n_turn_sa: int = 2
    dropout: float = 0.0
    patience: int = 5
    no_alignment_module: bool = False
    no_overall_slot_to_turn: bool = False
    no_ranking_task: bool = False
    soft_alignment: bool = False
    freeze_schema_encoders: bool = False
    weight_order: float = 1.0
    weight_align: float = 1.0
    weight_value: float = 1.0
    alignment_policy: str = "last"
    value_on_gold_alignment: bool = True
    eval_batch_size: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ["epochs", "batch_size", "max_seq_len", "max_turns", "d", "heads", "align_heads",
                    "eval_batch_size"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ["encoder_layers", "schema_layers", "n_slot_sa", "n_turn_sa", "patience"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ["peak_lr_encoder", "peak_lr_rest"]:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.warmup_proportion < 1.0:
            raise ConfigError(f"warmup_proportion must lie in [0, 1), got {self.warmup_proportion}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.d % self.align_heads:
            raise ConfigError(f"d={self.d} is not divisible by align_heads={self.align_heads}")
        if self.alignment_policy not in ("last", "first"):
            raise ConfigError(f"alignment_policy must be 'last' or 'first', got {self.alignment_policy!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
            expected = known[key].type
            if expected == "bool" and not isinstance(value, bool):
                raise ConfigError(f"config field {key!r} must be a boolean, got {value!r}")
            if expected == "int" and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"config field {key!r} must be an integer, got {value!r}")
            if expected == "float" and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"config field {key!r} must be a number, got {value!r}")
            if expected == "str" and not isinstance(value, str):
                raise ConfigError(f"config field {key!r} must be a string, got {value!r}")
            kwargs[key] = float(value) if expected == "float" else value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    @classmethod
    def paper_hparams(cls, **overrides) -> "TrainConfig":
        base = dict(peak_lr_encoder=3e-5, peak_lr_rest=1e-4, max_seq_len=512, align_heads=4,
                    n_slot_sa=4, n_turn_sa=2, freeze_schema_encoders=True)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
