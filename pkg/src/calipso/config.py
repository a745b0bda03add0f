"""Run configuration: a YAML tree of sections, each backed by a dataclass.

Unknown keys are rejected at every level; ``section.key=value`` overrides are
parsed as YAML scalars and applied after the file.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from .inference import DEFAULT_THRESHOLD
from .losses import LossConfig
from .network import ConfigError, NetworkConfig
from .synthetic import SceneGenConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    train_size: int = 2000
    test_size: int = 300
    train_seed: int = 1
    test_seed: int = 2


@dataclass(frozen=True)
class LossSection:
    sigma: float = 2.0
    lambda_pull: float = 10.0
    gamma_push: float = 100.0
    halve_push: bool = False


@dataclass(frozen=True)
class InferenceConfig:
    threshold: float = DEFAULT_THRESHOLD
    norm: str = "l2"
    detector: str = "ground-truth"
    drop_rate: float = 0.0
    jitter: float = 0.0
    misclassification_rate: float = 0.0
    detections_path: Optional[str] = None

    def __post_init__(self):
        if self.norm not in ("l1", "l2"):
            raise ConfigError(f"inference.norm must be l1 or l2, got {self.norm!r}")


@dataclass(frozen=True)
class BenchmarkConfig:
    pairs: tuple[int, ...] = (1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64)
    image_size: tuple[int, int] = (192, 192)
    repeats: int = 20
    warmup: int = 3


@dataclass(frozen=True)
class AblationConfig:
    variants: tuple[str, ...] = ("full", "no-target-presence", "no-passive")
    seeds: tuple[int, ...] = (0, 1, 2)
    steps: Optional[int] = 1000  # training steps per run; None keeps train.steps


SECTIONS = {
    "scene": SceneGenConfig,
    "data": DataConfig,
    "network": NetworkConfig,
    "train": TrainConfig,
    "loss": LossSection,
    "inference": InferenceConfig,
    "benchmark": BenchmarkConfig,
    "ablation": AblationConfig,
}


def _coerce(tp, value):
    """Lists from YAML become tuples where the field is a tuple."""
    origin = typing.get_origin(tp)
    if origin is tuple and isinstance(value, list):
        return tuple(value)
    if origin is typing.Union and isinstance(value, list):
        return tuple(value)
    return value


def build_section(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(values).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**{k: _coerce(hints[k], v) for k, v in values.items()})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def section_dict(obj) -> dict:
    d = dataclasses.asdict(obj)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossSection = field(default_factory=LossSection)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "RunConfig":
        d = dict(d or {})
        unknown = sorted(set(d) - set(SECTIONS) - {"seed"})
        if unknown:
            raise ConfigError(f"unknown config sections {unknown}")
        kw: dict[str, Any] = {name: build_section(sc, d.get(name, {}) or {}, name) for name, sc in SECTIONS.items()}
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"seed": self.seed, **{name: section_dict(getattr(self, name)) for name in SECTIONS}}

    def loss_config(self, usual_targets) -> LossConfig:
        return LossConfig(usual_targets=usual_targets, **dataclasses.asdict(self.loss))

    def dump(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(d: dict, overrides: Sequence[str]) -> dict:
    d = {k: dict(v) if isinstance(v, dict) else v for k, v in d.items()}
    for text in overrides:
        path, value = parse_override(text)
        if len(path) == 1:
            if path[0] != "seed":
                raise ConfigError(f"override {text!r}: top-level key must be 'seed'")
            d["seed"] = value
        elif len(path) == 2:
            if path[0] not in SECTIONS:
                raise ConfigError(f"override {text!r}: unknown section {path[0]!r}")
            d.setdefault(path[0], {})[path[1]] = value
        else:
            raise ConfigError(f"override {text!r}: nesting deeper than section.key")
    return d


def load_run_config(path=None, overrides: Sequence[str] = (), seed: Optional[int] = None) -> RunConfig:
    d: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        d = loaded or {}
    d = apply_overrides(d, overrides)
    if seed is not None:
        d["seed"] = seed
    return RunConfig.from_dict(d)
