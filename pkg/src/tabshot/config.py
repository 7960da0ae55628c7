"""Experiment configuration: JSON file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .exceptions import DataFormatError
from .fewshot import config_hash

# keys that only say where results go; they do not change results
_NON_SEMANTIC = {"out"}


@dataclass
class ExperimentConfig:
    # data / transform
    data: Optional[str] = None
    label: Optional[str] = None
    layout_seed: int = 0
    max_sweeps: int = 50
    distance_mode: str = "euclidean"
    write_png: bool = True
    # backbone
    arch: str = "conv4"
    channels: int = 64
    latent_mode: Optional[str] = None  # None: flatten for proto, gap for maml
    init_seed: int = 0
    # head
    head: str = "proto"
    inner_steps: int = 5
    inner_lr: float = 0.01
    # evaluation episodes
    way: int = 2
    shot: int = 1
    query: int = 15
    episodes: int = 100
    seed: int = 0
    # meta-training
    corpus: str = "synthetic"
    corpus_classes: int = 32
    corpus_per_class: int = 20
    corpus_seed: int = 0
    train_way: int = 5
    train_shot: int = 5
    train_query: int = 5
    epochs: int = 1
    episodes_per_epoch: int = 50
    lr: float = 1e-3
    resume: Optional[str] = None
    # inputs produced by earlier commands
    weights: Optional[str] = None
    images: Optional[str] = None
    points: Optional[str] = None
    natural: Optional[str] = None
    tabular: Optional[str] = None
    max_points: int = 500
    dump_episodes: bool = False
    out: str = "out"

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise DataFormatError(f"cannot read config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise DataFormatError(f"config {path} must be a JSON object")
        return cls().updated(raw)

    def updated(self, overrides: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise DataFormatError(f"unknown config keys: {sorted(unknown)}")
        values = asdict(self)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig(**values)

    def resolved_latent_mode(self) -> str:
        if self.latent_mode:
            return self.latent_mode
        return "gap" if self.head == "maml" else "flatten"

    def semantic_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in _NON_SEMANTIC}

    @property
    def hash(self) -> str:
        return config_hash(self.semantic_dict())
