"""Training configuration and its strict JSON schema."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .encoders import EncoderConfig
from .fewshot import EpisodeSpec, LossConfig
from .optim import OptimizerConfig

OBJECTIVES = ("softmax", "softmax+triplet")


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    objective: str = "softmax+triplet"
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train_spec: EpisodeSpec = field(default_factory=lambda: EpisodeSpec(10, 1, 5))
    val_spec: EpisodeSpec = field(default_factory=lambda: EpisodeSpec(5, 1, 5))
    n_train: int = 30_000
    eval_every: int = 2_000
    val_episodes: int = 1_000
    seed: int = 0
    word_dim: int = 50
    vectors: str | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.n_train < 1:
            raise ValueError("n_train must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    @property
    def interval(self) -> int:
        return min(self.eval_every, self.n_train)

    def effective_loss(self) -> LossConfig:
        """The loss actually optimised: a softmax objective forces lambda = 0."""
        if self.objective == "softmax":
            return dataclasses.replace(self.loss, lam=0.0)
        return self.loss

    @property
    def model_name(self) -> str:
        base = "LM-ProtoNet" if self.objective == "softmax+triplet" else "ProtoNet"
        return f"{base} ({self.encoder.mode.upper()})"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        return _build(cls, raw, "config")

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


_NESTED = {
    "encoder": EncoderConfig,
    "loss": LossConfig,
    "optimizer": OptimizerConfig,
    "train_spec": EpisodeSpec,
    "val_spec": EpisodeSpec,
}


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ValueError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        sub = _NESTED.get(key) if cls is TrainConfig else None
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub else value
    return cls(**kwargs)
