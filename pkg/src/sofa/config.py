"""Merged run configuration: one tree covering every module, strict keys.

Values resolve as CLI flags > config file > defaults. The hash of the
canonical JSON form is recorded in every manifest; key order never affects
it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import persist
from .classifier import ClassifierConfig
from .cohort import DoseModelConfig, LabelModelConfig, LesionConfig, SynthConfig
from .generator import GeneratorConfig
from .optimizer import OptimizerConfig


def _from_dict(cls, d: dict):
    """Build a dataclass, rejecting unknown keys and fixing tuple fields."""
    if not isinstance(d, dict):
        raise ValueError(f"expected a mapping for {cls.__name__}, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in d.items():
        default = fields[key].default
        if dataclasses.is_dataclass(default.__class__) and isinstance(value, dict):
            kwargs[key] = _from_dict(default.__class__, value)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _synth_from_dict(d: dict) -> SynthConfig:
    d = dict(d)
    kwargs: dict[str, Any] = {}
    if "ranges" in d:
        kwargs["ranges"] = {k: tuple(v) for k, v in d.pop("ranges").items()}
    if "dose" in d:
        kwargs["dose"] = _from_dict(DoseModelConfig, d.pop("dose"))
    if "label" in d:
        kwargs["label"] = _from_dict(LabelModelConfig, d.pop("label"))
    if "lesions" in d:
        kwargs["lesions"] = _from_dict(LesionConfig, d.pop("lesions"))
    known = {"resolution", "strategy"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown SynthConfig keys: {', '.join(sorted(unknown))}")
    kwargs.update(d)
    return SynthConfig(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    eval_folds: int = 5

    def to_dict(self) -> dict:
        return {
            "synth": self.synth.to_dict(),
            "generator": self.generator.to_dict(),
            "classifier": self.classifier.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "eval_folds": self.eval_folds,
        }

    def hash(self) -> str:
        return persist.config_hash(self.to_dict())

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        known = {"synth", "generator", "classifier", "optimizer", "eval_folds"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config sections: {', '.join(sorted(unknown))}")
        kwargs: dict[str, Any] = {}
        if "synth" in d:
            kwargs["synth"] = _synth_from_dict(d["synth"])
        if "generator" in d:
            kwargs["generator"] = _from_dict(GeneratorConfig, d["generator"])
        if "classifier" in d:
            kwargs["classifier"] = _from_dict(ClassifierConfig, d["classifier"])
        if "optimizer" in d:
            kwargs["optimizer"] = _from_dict(OptimizerConfig, d["optimizer"])
        if "eval_folds" in d:
            kwargs["eval_folds"] = int(d["eval_folds"])
        return RunConfig(**kwargs)

    @staticmethod
    def load(path: str | Path | None) -> "RunConfig":
        if path is None:
            return RunConfig()
        return RunConfig.from_dict(persist.read_json(path))


# A compact profile for desk-scale experiments and the test suite: 32 px
# views, narrow networks, lesion geometry rescaled to the small canvas.
TINY_OVERRIDES = {
    "synth": {
        "resolution": 48,
        # gaps must stay wider than the ribbon stamp radius plus the scar
        # blur halo at this scale or coverage saturates and the labels lose
        # their signal
        "lesions": {"ribbon_width": 3, "ring_radius_frac": [0.12, 0.17],
                    "gap_len_range": [0.22, 0.45], "max_gaps_per_path": 3},
        "dose": {"blur_sigma": 1.0},
    },
    "generator": {"resolution": 48, "channels": 20, "depth": 3,
                  "epochs": 45, "batch_size": 8, "lr": 2e-3},
    "classifier": {"hidden": 32, "epochs": 400},
    "optimizer": {"closing_radius": 3, "eta": 0.1},
}


def merge_dicts(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_dicts(out[key], value)
        else:
            out[key] = value
    return out


def tiny_config(extra: dict = None) -> RunConfig:
    d = merge_dicts(RunConfig().to_dict(), TINY_OVERRIDES)
    if extra:
        d = merge_dicts(d, extra)
    return RunConfig.from_dict(d)
