"""Flat run configuration: defaults, key=value files, overrides and hashing."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .labels import Scheme
from .models import LossWeights, ModelConfig, ModelVariant
from .training import TrainConfig

# Keys that describe where data lives rather than what is computed; left out of the hash.
LOCATION_KEYS = ("train", "dev", "test", "embeddings", "output")


@dataclass(frozen=True)
class RunConfig:
    variant: str = "TIg"
    scheme: str = "BIOES"
    types: str = ""
    char_embed_dim: int = 30
    char_hidden: int = 25
    word_embed_dim: int = 100
    word_hidden: int = 300
    dropout: float = 0.5
    highway: bool = True
    fix_embeddings: bool = False
    width_multiplier: float = 1.0
    fused_lstm: bool = True
    alpha: float = 1.0
    beta: float = 1.0
    lr: float = 0.01
    decay: float = 0.05
    momentum: float = 0.9
    batch_size: int = 10
    clip: float = 5.0
    patience: int = 30
    min_epochs: int = 120
    max_epochs: int = 300
    adversarial: bool = False
    epsilon: float = 0.05
    adversarial_mode: str = "l2"
    constrained_decoding: bool = False
    type_o_target: bool = True
    seed: int = 0
    train: str = ""
    dev: str = ""
    test: str = ""
    embeddings: str = ""
    output: str = ""

    def validate(self) -> "RunConfig":
        self.model_config()
        self.train_config().validate()
        return self

    def type_list(self) -> tuple:
        return tuple(t for t in self.types.split(",") if t)

    def model_config(self) -> ModelConfig:
        enc = EncoderConfig(
            self.char_embed_dim,
            self.char_hidden,
            self.word_embed_dim,
            self.word_hidden,
            self.dropout,
            self.highway,
            self.fix_embeddings,
            self.width_multiplier,
            self.fused_lstm,
        )
        enc.validate()
        return ModelConfig(
            ModelVariant.parse(self.variant),
            enc,
            Scheme.parse(self.scheme),
            LossWeights(self.alpha, self.beta),
            self.constrained_decoding,
            self.type_o_target,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            self.lr,
            self.decay,
            self.momentum,
            self.batch_size,
            self.clip,
            self.patience,
            self.min_epochs,
            self.max_epochs,
            self.seed,
            self.adversarial,
            self.epsilon,
            self.adversarial_mode,
        )

    def to_lines(self) -> list:
        return [f"{k}={_render(v)}" for k, v in asdict(self).items()]

    def config_hash(self) -> str:
        text = "\n".join(line for line in self.to_lines() if line.split("=", 1)[0] not in LOCATION_KEYS)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, pairs: dict) -> "RunConfig":
        return replace(self, **_coerce_all(pairs))


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, text) -> object:
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    if not isinstance(text, str):
        return text
    try:
        if kind == "bool":
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key} ({kind})") from None
    return text.strip()


def _coerce_all(pairs: dict) -> dict:
    return {k: _coerce(k, v) for k, v in pairs.items()}


def parse_pairs(lines) -> dict:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    base = RunConfig()
    pairs = {}
    if path:
        try:
            pairs.update(parse_pairs(Path(path).read_text(encoding="utf-8").splitlines()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    pairs.update(overrides or {})
    return base.with_overrides(pairs).validate()


def manifest_lines(config: RunConfig, extra: dict | None = None) -> list:
    """Manifest text: the full config, its hash, then any extra facts (variant, types, ...)."""
    lines = config.to_lines() + [f"config_hash={config.config_hash()}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={_render(v)}")
    return lines


def default_manifest() -> str:
    return "\n".join(manifest_lines(RunConfig())) + "\n"
