"""Pipeline configuration. Defaults are the full-scale constants."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .dsp import is_power_of_two
from .errors import InvalidConfig
from .model import ModelConfig
from .training import TrainConfig
from .vocab import CONTROL_TOKENS, Vocabulary

FULL_PHONEMES = tuple(f"ph{i}" for i in range(26))


@dataclass(frozen=True)
class PipelineConfig:
    sample_rate: int = 8820
    frame_length: int = 1024
    overlap: int = 128
    n_mel: int = 80
    f_min: float = 0.0
    f_max: float = 4410.0
    clip_seconds: float = 2.0
    floor_db: float = -100.0
    phonemes: tuple[str, ...] = FULL_PHONEMES
    pad_to: int | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        object.__setattr__(self, "phonemes", tuple(self.phonemes))

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.phonemes)

    @property
    def hop(self) -> int:
        return self.frame_length - self.overlap

    @property
    def n_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))

    @property
    def n_frames(self) -> int:
        return (self.n_samples - self.frame_length) // self.hop + 1

    def validate(self) -> "PipelineConfig":
        if self.sample_rate <= 0:
            raise InvalidConfig("sample_rate must be positive")
        if not is_power_of_two(self.frame_length):
            raise InvalidConfig(f"frame_length must be a power of two, got {self.frame_length}")
        if not 0 <= self.overlap < self.frame_length:
            raise InvalidConfig(f"overlap must be in [0, frame_length), got {self.overlap}")
        if not 0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise InvalidConfig(f"need 0 <= f_min < f_max <= sample_rate / 2, got [{self.f_min}, {self.f_max}]")
        if self.n_samples < self.frame_length:
            raise InvalidConfig("clip_seconds too short for one frame")
        if self.model.n_mel != self.n_mel:
            raise InvalidConfig(f"model.n_mel ({self.model.n_mel}) != n_mel ({self.n_mel})")
        if self.model.T != len(self.phonemes) + len(CONTROL_TOKENS):
            raise InvalidConfig(
                f"model.T ({self.model.T}) != {len(self.phonemes)} phonemes + {len(CONTROL_TOKENS)} control tokens"
            )
        if self.pad_to is not None and self.pad_to < 3:
            raise InvalidConfig("pad_to must be >= 3")
        Vocabulary(self.phonemes)  # raises on duplicate or reserved symbols
        self.model.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phonemes"] = list(self.phonemes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        model = d.pop("model", {}) or {}
        train = d.pop("train", {}) or {}
        try:
            phonemes = d.get("phonemes")
            if "T" not in model and phonemes is not None:
                model = {**model, "T": len(phonemes) + len(CONTROL_TOKENS)}
            if "n_mel" not in model and "n_mel" in d:
                model = {**model, "n_mel": d["n_mel"]}
            return cls(**d, model=ModelConfig(**model), train=TrainConfig(**train))
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc

    def override(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: {exc}") from exc
    return PipelineConfig.from_dict(data)


def save_config(path, cfg: PipelineConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2)
        f.write("\n")


def desk_config(n_phonemes: int = 12, epochs: int = 60, seed: int = 42) -> PipelineConfig:
    """Desk-scale settings used with the synthetic corpus."""
    phonemes = tuple(f"p{i}" for i in range(n_phonemes))
    return PipelineConfig(
        phonemes=phonemes,
        model=ModelConfig(T=n_phonemes + len(CONTROL_TOKENS)),
        train=TrainConfig(batch_size=32, epochs=epochs, seed=seed, test_fraction=0.1),
    )
