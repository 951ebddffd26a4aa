"""Flat key = value run configuration.

One file drives a whole run; every key can be overridden on the command
line, unknown keys are rejected, and the effective configuration is written
back out so a run can be reproduced from its own artifacts. Lines starting
with '#' are comments.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .augment import AugmentationConfig
from .model import ModelConfig
from .objective import LossConfig
from .reweight import ReweightConfig
from .trainer import TrainConfig

TRAINER_MODES = ("facl", "plain")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # preprocessing
    min_count: int = 5
    max_len: int = 50
    # augmentation
    gamma: float = 0.3
    eta: float = 0.3
    cap_multiplier: float = 2.0
    max_resamples: int = 20
    correlation_top_k: int = 20
    correlation_window: int = 5
    aug_policy: str = "adaptive"
    len_aware: bool = False
    # reweighting
    beta: float = 0.1
    reweight_enabled: bool = True
    weight_clip_min: float = 0.1
    weight_clip_max: float = 10.0
    weight_normalize: bool = False
    # model
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 2
    dropout_rate: float = 0.1
    encoder_kind: str = "self_attention"
    # objective
    cl_weight: float = 0.1
    temperature: float = 1.0
    symmetric_cl: bool = True
    # training
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    all_prefixes: bool = False
    mode: str = "facl"   # "plain" disables augmentation, contrastive loss, reweighting

    def __post_init__(self):
        if self.mode not in TRAINER_MODES:
            raise ConfigError(f"mode must be one of {TRAINER_MODES}")

    # --- parsing ---

    @classmethod
    def _field_types(cls) -> dict[str, type]:
        return {f.name: f.type for f in fields(cls)}

    @classmethod
    def parse_value(cls, key: str, raw: str):
        types = {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}
        if key not in types:
            raise ConfigError(f"unknown configuration key {key!r}")
        target = types[key]
        raw = raw.strip()
        try:
            if target is bool:
                if raw.lower() in ("true", "1", "yes", "on"):
                    return True
                if raw.lower() in ("false", "0", "no", "off"):
                    return False
                raise ValueError(raw)
            if target is int:
                return int(raw)
            if target is float:
                return float(raw)
            return raw
        except ValueError:
            raise ConfigError(f"cannot parse {raw!r} as {target.__name__} for key {key!r}") from None

    @classmethod
    def from_file(cls, path: str | Path, overrides: dict[str, str] | None = None) -> "RunConfig":
        values: dict[str, object] = {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            values[key] = cls.parse_value(key, val)
        for key, val in (overrides or {}).items():
            values[key] = cls.parse_value(key, val) if isinstance(val, str) else val
        return cls(**values)

    @classmethod
    def from_overrides(cls, overrides: dict[str, str] | None = None) -> "RunConfig":
        values = {
            k: cls.parse_value(k, v) if isinstance(v, str) else v
            for k, v in (overrides or {}).items()
        }
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:10]

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)

    # --- sub-configs ---

    def augmentation_config(self) -> AugmentationConfig:
        return AugmentationConfig(
            gamma=self.gamma,
            eta=self.eta,
            cap_multiplier=self.cap_multiplier,
            max_resamples=self.max_resamples,
            correlation_top_k=self.correlation_top_k,
            correlation_window=self.correlation_window,
            policy=self.aug_policy,
            len_aware=self.len_aware,
        )

    def reweight_config(self) -> ReweightConfig | None:
        if not self.reweight_enabled or self.mode == "plain":
            return None
        return ReweightConfig(
            beta=self.beta,
            clip_min=self.weight_clip_min,
            clip_max=self.weight_clip_max,
            normalize=self.weight_normalize,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            max_len=self.max_len,
            dropout_rate=self.dropout_rate,
            encoder_kind=self.encoder_kind,
        )

    def loss_config(self) -> LossConfig:
        cl = 0.0 if self.mode == "plain" else self.cl_weight
        return LossConfig(
            cl_weight=cl, temperature=self.temperature, symmetric=self.symmetric_cl
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            patience=self.patience,
            seed=self.seed,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            clip_norm=self.clip_norm,
            all_prefixes=self.all_prefixes,
        )
