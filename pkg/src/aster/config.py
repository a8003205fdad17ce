"""Experiment configuration as flat ``section.key = value`` text."""

from __future__ import annotations

import ast
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from aster.classifier import ClassifierConfig
from aster.embedding import EmbeddingConfig
from aster.errors import ConfigError
from aster.model import ModelConfig
from aster.perturbator import PerturbatorConfig
from aster.synth import SyntheticSpec
from aster.training import TrainConfig

RUN_ROOT_ENV = "ASTER_RUN_ROOT"
DEFAULT_RUN_ROOT = "runs"


@dataclass
class DataConfig:
    train: Optional[str] = None
    test: Optional[str] = None
    label_column: str = "label"


@dataclass
class MetricConfig:
    percentiles: tuple[float, ...] = tuple(range(90, 100))
    pool: bool = True  # take threshold percentiles over train and test scores together
    buffer_max: Optional[int] = None  # None: longest test anomaly
    exclude_extrapolated: bool = False  # drop the t < L steps filled by the edge rule


@dataclass
class RunConfig:
    out: Optional[str] = None
    dtype: str = "float32"


# fields fixed by other sections or by the data, never read from a file
_DERIVED = {
    "embedding": {"D"},
    "perturbator": {"M"},
    "classifier": {"M", "window_length"},
}


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    perturbator: PerturbatorConfig = field(default_factory=PerturbatorConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    run: RunConfig = field(default_factory=RunConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    def sections(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def items(self) -> list[tuple[str, Any]]:
        out = []
        for name, section in self.sections().items():
            for f in fields(section):
                if f.name not in _DERIVED.get(name, ()):
                    out.append((f"{name}.{f.name}", getattr(section, f.name)))
        return out

    def set(self, key: str, value: Any) -> None:
        section_name, _, name = key.partition(".")
        section = self.sections().get(section_name)
        if section is None or not name:
            raise ConfigError(f"unknown config key {key!r}")
        known = {f.name: f for f in fields(section)}
        if name not in known or name in _DERIVED.get(section_name, ()):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(section, name)
        if isinstance(value, str):
            value = _parse_value(value, current)
        setattr(section, name, _coerce(key, value, current))
        if section_name == "embedding" and name == "backbone_mode":
            section.__post_init__()

    def model_config(self, D: int) -> ModelConfig:
        """Model config with the shared width, window length and data dimension filled in."""
        emb = EmbeddingConfig(**{**vars(self.embedding), "D": D})
        per = PerturbatorConfig(**{**vars(self.perturbator), "M": emb.M})
        cls = ClassifierConfig(**{**vars(self.classifier), "M": emb.M, "window_length": self.train.window_length})
        return ModelConfig(embedding=emb, perturbator=per, classifier=cls, dtype=self.run.dtype)

    def validate(self) -> None:
        self.train.validate()
        model = self.model_config(D=1)
        model.embedding.validate()
        model.perturbator.validate()
        model.classifier.validate()
        self.synth.validate()
        if self.run.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.run.dtype!r}")
        if not self.metrics.percentiles:
            raise ConfigError("metrics.percentiles is empty")

    def dumps(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.items())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        config = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            try:
                config.set(key.strip(), value.strip())
            except ConfigError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from exc
        return config

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.loads(path.read_text(encoding="utf-8"))


def _parse_value(text: str, current: Any) -> Any:
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        # bare words such as `lora` or file paths
        return text


def _coerce(key: str, value: Any, current: Any) -> Any:
    if value is None or current is None:
        return value
    try:
        if isinstance(current, bool):
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            items = value if isinstance(value, (list, tuple)) else [value]
            kind = type(current[0]) if current else None
            return tuple(kind(v) if kind in (int, float) else v for v in items)
        if isinstance(current, str):
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def default_run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, DEFAULT_RUN_ROOT))
