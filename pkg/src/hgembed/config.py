from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Any, Mapping, Optional

from .embedder import EmbedderConfig

PROPAGATION_MODES = ("latent", "initial")


@dataclass(frozen=True)
class TrainConfig:
    d_v: int = 256
    d_e: int = 16
    d_h: Optional[int] = None
    T: int = 2
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 8
    seed: int = 42
    clip_norm: float = 5.0
    propagation: str = "latent"
    init_scale: float = 0.1
    # embedder settings travel with the training config
    hash_seed: int = 0
    lowercase: bool = True

    def __post_init__(self):
        if self.d_h is None:
            object.__setattr__(self, "d_h", self.d_v)
        if self.d_h != self.d_v:
            raise ValueError("d_h must equal d_v")
        if self.d_v < 1 or self.d_e < 1:
            raise ValueError("dimensions must be positive")
        if self.T < 0 or self.epochs < 0:
            raise ValueError("T and epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0 or not self.clip_norm > 0 or not self.init_scale >= 0:
            raise ValueError("learning_rate and clip_norm must be > 0, init_scale >= 0")
        if self.propagation not in PROPAGATION_MODES:
            raise ValueError(f"propagation must be one of {PROPAGATION_MODES}")

    @property
    def d_in(self) -> int:
        return 2 * self.d_v + self.d_e

    def embedder(self) -> EmbedderConfig:
        return EmbedderConfig(self.d_v, self.hash_seed, self.lowercase)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes) -> "TrainConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        if "d_v" in changes and "d_h" not in changes:
            changes["d_h"] = changes["d_v"]
        return dataclasses.replace(self, **changes)
