"""Experiment configuration: training hyperparameters, dataset binding,
output locations. JSON documents are validated strictly (unknown keys
rejected); precedence is defaults < config file < command-line flags.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError
from .scenes import SceneSpec

VARIANTS = ("F", "V&F", "F2", "V2F")
_VARIANT_ALIASES = {
    "F": "F",
    "V&F": "V&F",
    "VF": "V&F",
    "V+F": "V&F",
    "F2": "F2",
    "F^2": "F2",
    "V2F": "V2F",
}


def normalize_variant(value: str) -> str:
    key = str(value).upper().replace("²", "2")
    if key not in _VARIANT_ALIASES:
        raise ConfigError(f"unknown pipeline variant {value!r}; use one of {VARIANTS}")
    return _VARIANT_ALIASES[key]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    variant: str = "V2F"
    alpha: float = 0.3
    beta: float = 1.0
    label_mode: str = "hard"
    ioa_denominator: str = "visible"
    nms_mode: str | None = None  # resolved by variant when None
    nms_threshold: float = 0.5
    epochs: int = 20
    learning_rate: float = 1e-3
    lr_decay_epochs: tuple[int, ...] = (14, 18)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    sample_cap: int = 1000
    sample_cap_literal_max: bool = False
    positive_fraction: float = 0.9
    channels: int = 64
    feature_dim: int = 64
    roi_size: int = 7
    head_width: int = 256
    anchor_scale: float = 1.0
    train_proposals: int = 256
    infer_proposals: int = 300
    rpn_batch: int = 256

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights alpha/beta must be >= 0")
        if not 0.0 < self.positive_fraction <= 1.0:
            raise ConfigError("positive_fraction must be in (0, 1]")
        if self.label_mode not in ("hard", "soft"):
            raise ConfigError("label_mode must be 'hard' or 'soft'")
        if self.ioa_denominator not in ("visible", "part"):
            raise ConfigError("ioa_denominator must be 'visible' or 'part'")
        if self.nms_mode not in (None, "full", "visible"):
            raise ConfigError("nms_mode must be 'full', 'visible' or null")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    @property
    def resolved_nms_mode(self) -> str:
        if self.nms_mode is not None:
            return self.nms_mode
        return "visible" if self.variant == "V2F" else "full"

    def arch_dict(self) -> dict:
        """The fields that determine parameter shapes and semantics."""
        return {
            "variant": self.variant,
            "channels": self.channels,
            "feature_dim": self.feature_dim,
            "roi_size": self.roi_size,
            "head_width": self.head_width,
            "anchor_scale": self.anchor_scale,
        }

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lr_decay_epochs"] = list(self.lr_decay_epochs)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "lr_decay_epochs" in kwargs:
            kwargs["lr_decay_epochs"] = tuple(kwargs["lr_decay_epochs"])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid training config: {exc}") from exc


@dataclass(frozen=True)
class DatasetConfig:
    """Either a persisted dataset directory or a scene spec + seed range.

    Seed ranges are half-open [start, stop) so train/val/test splits are
    reproducible without persisted artifacts.
    """

    dir: str | None = None
    spec: SceneSpec | None = None
    seed_range: tuple[int, int] | None = None

    def __post_init__(self):
        if (self.dir is None) == (self.spec is None):
            raise ConfigError("dataset needs exactly one of 'dir' or 'spec'")
        if self.spec is not None and self.seed_range is None:
            raise ConfigError("'spec' datasets need a 'seed_range'")

    def to_dict(self) -> dict:
        if self.dir is not None:
            return {"dir": self.dir}
        return {"spec": self.spec.to_dict(), "seed_range": list(self.seed_range)}

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetConfig":
        known = {"dir", "spec", "seed_range"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown dataset config keys: {sorted(unknown)}")
        spec = None
        if data.get("spec") is not None:
            try:
                spec = SceneSpec.from_dict(data["spec"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid scene spec: {exc}") from exc
        seed_range = tuple(data["seed_range"]) if "seed_range" in data else None
        return cls(dir=data.get("dir"), spec=spec, seed_range=seed_range)

    def load_scenes(self):
        from .scenes import generate_scenes, load_dataset

        if self.dir is not None:
            path = Path(self.dir)
            if not path.exists():
                raise ConfigError(f"dataset directory {path} does not exist")
            return load_dataset(path)
        return generate_scenes(self.spec, range(*self.seed_range))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a CLI run needs: training, data binding, outputs."""

    train: TrainConfig = field(default_factory=TrainConfig)
    train_data: DatasetConfig | None = None
    test_data: DatasetConfig | None = None
    output_dir: str = "runs/default"
    eval_iou_threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "train_data": self.train_data.to_dict() if self.train_data else None,
            "test_data": self.test_data.to_dict() if self.test_data else None,
            "output_dir": self.output_dir,
            "eval_iou_threshold": self.eval_iou_threshold,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {"train", "train_data", "test_data", "output_dir",
                 "eval_iou_threshold"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(
            train=TrainConfig.from_dict(data.get("train", {})),
            train_data=DatasetConfig.from_dict(data["train_data"])
            if data.get("train_data") else None,
            test_data=DatasetConfig.from_dict(data["test_data"])
            if data.get("test_data") else None,
            output_dir=data.get("output_dir", "runs/default"),
            eval_iou_threshold=float(data.get("eval_iou_threshold", 0.5)),
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top-level JSON must be an object")
        return cls.from_dict(data)

    def write_snapshot(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
