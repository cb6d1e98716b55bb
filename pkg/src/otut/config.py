"""Pipeline configuration: one YAML (or JSON) file, command-line flags on top."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .corpus import SeedFilterConfig
from .models import HeadConfig, TrainConfig
from .synthesis import SynthesisConfig


def _from_block(cls, block: Optional[dict]):
    block = dict(block or {})
    known = {f.name for f in fields(cls)}
    unknown = set(block) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    return cls(**block)


@dataclass
class PipelineConfig:
    seed_filter: SeedFilterConfig = field(default_factory=SeedFilterConfig)
    encoders: dict = field(default_factory=lambda: {"kind": "reference", "dim": 64, "seed": 0})
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PipelineConfig":
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config sections: {', '.join(sorted(unknown))}")
        enc = {"kind": "reference", "dim": 64, "seed": 0, **(data.get("encoders") or {})}
        return cls(
            seed_filter=_from_block(SeedFilterConfig, data.get("seed_filter")),
            encoders=enc,
            synthesis=_from_block(SynthesisConfig, data.get("synthesis")),
            head=_from_block(HeadConfig, data.get("head")),
            train=_from_block(TrainConfig, data.get("train")),
            paths=dict(data.get("paths") or {}),
        )

    @classmethod
    def load(cls, path: Optional[str | Path]) -> "PipelineConfig":
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(yaml.safe_load(f))

    def with_seed(self, seed: int) -> "PipelineConfig":
        from dataclasses import replace

        return replace(
            self,
            synthesis=replace(self.synthesis, seed=seed),
            train=replace(self.train, seed=seed),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["betas"] = list(d["train"]["betas"])
        return d

    def hash(self) -> str:
        """Stable over everything except file paths."""
        d = self.to_dict()
        d.pop("paths")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]
