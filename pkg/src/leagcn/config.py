"""Model hyperparameters and the flat ``key=value`` config format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

VARIANTS = ("full", "pos-off", "ea-off", "all-off")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 16
    pos_weight: float = 0.3        # share of the positional vector added before the EA map
    heads: int = 4                 # external-attention heads; must divide dim
    slots: int = 16                # memory rows per head
    mlp_dim: int = 0               # hidden width of the channel-2 scorer; 0 means dim
    dropout: float = 0.1
    lr_a: float = 0.002
    lr_b: float = 0.004
    batch_size: int = 256
    l2: float = 1e-7
    layers: int = 1
    loss_mode: str = "all"
    pooling: str = "last"
    optimizer: str = "split"       # split: per-domain Adam groups; joint: one group at lr_a
    variant: str = "full"
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "heads", "slots", "batch_size", "layers", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.dim % self.heads:
            raise ConfigError(f"heads={self.heads} does not divide dim={self.dim}")
        if not 0.0 <= self.pos_weight <= 1.0:
            raise ConfigError(f"pos_weight must lie in [0, 1], got {self.pos_weight}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr_a < 0 or self.lr_b < 0 or self.l2 < 0 or self.mlp_dim < 0:
            raise ConfigError("learning rates, l2 and mlp_dim must be non-negative")
        choices = {"loss_mode": ("all", "last"), "pooling": ("mean", "last"),
                   "optimizer": ("split", "joint"), "variant": VARIANTS}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def hidden_dim(self) -> int:
        return self.mlp_dim or self.dim

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


MODEL_KEYS = {f.name: f.type for f in fields(ModelConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def coerce(key: str, value: Any, known: Mapping[str, str]) -> Any:
    if key not in known:
        raise ConfigError(f"unknown config key {key!r}")
    kind = known[key]
    try:
        return _CASTS[kind](value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {value!r} as {kind}") from None


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def read_flat(path) -> dict[str, str]:
    path = Path(path)
    try:
        return parse_flat(path.read_text(encoding="utf-8"), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
