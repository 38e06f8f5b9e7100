"""Run configuration: a single JSON file fully determines a run.

Defaults follow the reference training recipe (64 hidden units in both LSTM
layers, batch 60, learning rate 0.001, dropout and recurrent dropout 0.25,
early-stopping patience 20); everything is overridable per run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError, ContractError
from .model import normalize_variant


@dataclass
class SynthConfig:
    tasks: int = 3
    windows: int = 300
    features: int = 8
    labels: int = 1
    kind: str = "classification"
    boost: float = 0.8
    pulse_len: int | None = None
    noise_sigma: float = 0.1
    distractor_scale: float = 2.5

    def validate(self) -> None:
        if self.tasks < 1:
            raise ConfigError(f"synth.tasks: must be >= 1, got {self.tasks}")
        if self.windows < 1:
            raise ConfigError(f"synth.windows: must be >= 1, got {self.windows}")
        if self.features < 4:
            raise ConfigError(f"synth.features: must be >= 4, got {self.features}")
        if self.labels < 1:
            raise ConfigError(f"synth.labels: must be >= 1, got {self.labels}")
        if self.kind not in ("classification", "regression"):
            raise ConfigError(f"synth.kind: unknown kind {self.kind!r}")
        if self.pulse_len is not None and self.pulse_len < 1:
            raise ConfigError(f"synth.pulse_len: must be >= 1, got {self.pulse_len}")
        if self.distractor_scale <= 0:
            raise ConfigError(
                f"synth.distractor_scale: must be > 0, got {self.distractor_scale}")


@dataclass
class RunConfig:
    variant: str = "fathom"
    dataset_dir: str | None = None
    synth: SynthConfig | None = None
    window: int = 30
    stride: int = 1
    hidden: int = 64
    batch: int = 60
    lr: float = 0.001
    patience: int = 20
    dropout: float = 0.25
    recurrent_dropout: float = 0.25
    l2: float = 1e-4
    max_epochs: int = 100
    seed: int = 0
    output_dir: str = "runs/out"
    workers: int | None = None
    export_windows: int = 8

    def validate(self) -> None:
        try:
            self.variant = normalize_variant(self.variant)
        except ContractError as e:
            raise ConfigError(f"variant: {e}") from None
        if (self.dataset_dir is None) == (self.synth is None):
            raise ConfigError("dataset_dir: provide exactly one of dataset_dir or a synth block")
        for name in ("window", "stride", "hidden", "batch", "max_epochs", "export_windows"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.lr < 0:
            raise ConfigError(f"lr: must be >= 0, got {self.lr}")
        if self.patience < 0:
            raise ConfigError(f"patience: must be >= 0, got {self.patience}")
        for name in ("dropout", "recurrent_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name}: must be in [0, 1), got {getattr(self, name)}")
        if self.l2 < 0:
            raise ConfigError(f"l2: must be >= 0, got {self.l2}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {self.workers}")
        if self.synth is not None:
            self.synth.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config field")
        kwargs = dict(d)
        if kwargs.get("synth") is not None:
            synth_known = {f.name for f in fields(SynthConfig)}
            synth_unknown = sorted(set(kwargs["synth"]) - synth_known)
            if synth_unknown:
                raise ConfigError(f"synth.{synth_unknown[0]}: unknown config field")
            kwargs["synth"] = SynthConfig(**kwargs["synth"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config: file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON in {path}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config: expected a JSON object in {path}")
        return cls.from_dict(raw)
