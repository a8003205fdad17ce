"""Synthetic multivariate sinusoid data with injected, labelled anomalies."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aster.data import TimeSeriesDataset, save_csv
from aster.errors import ConfigError

ANOMALY_TYPES = ("spike", "level_shift", "noise_burst")


@dataclass
class SyntheticSpec:
    T_train: int = 4000
    T_test: int = 2000
    D: int = 2
    n_components: int = 2
    period_range: tuple[float, float] = (20.0, 100.0)
    noise_std: float = 0.1
    anomaly_types: tuple[str, ...] = ANOMALY_TYPES
    anomaly_rate: float = 0.05
    span_range: tuple[int, int] = (5, 20)
    seed: int = 1

    def validate(self) -> None:
        if not 0.0 < self.anomaly_rate < 0.5:
            raise ConfigError(f"anomaly_rate must lie in (0, 0.5), got {self.anomaly_rate}")
        if self.T_train < 1 or self.T_test < 1 or self.D < 1 or self.n_components < 1:
            raise ConfigError("lengths, D and n_components must be positive")
        unknown = set(self.anomaly_types) - set(ANOMALY_TYPES)
        if unknown or not self.anomaly_types:
            raise ConfigError(f"anomaly types must be a non-empty subset of {ANOMALY_TYPES}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")


@dataclass
class Segment:
    kind: str
    start: int  # 0-based index into the test split
    length: int
    features: tuple[int, ...]


@dataclass
class SyntheticSeries:
    train: TimeSeriesDataset
    test: TimeSeriesDataset
    clean_test: np.ndarray
    segments: list[Segment] = field(default_factory=list)


def generate(spec: SyntheticSpec) -> SyntheticSeries:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    T = spec.T_train + spec.T_test
    t = np.arange(T, dtype=np.float64)[:, None]

    lo, hi = spec.period_range
    periods = rng.uniform(lo, hi, size=(spec.n_components, spec.D))
    amps = rng.uniform(0.5, 1.5, size=(spec.n_components, spec.D))
    phases = rng.uniform(0.0, 2 * np.pi, size=(spec.n_components, spec.D))
    clean = sum(amps[i] * np.sin(2 * np.pi * t / periods[i] + phases[i]) for i in range(spec.n_components))
    noisy = clean + rng.normal(0.0, spec.noise_std, size=clean.shape)
    feat_std = clean[: spec.T_train].std(axis=0)

    test = noisy[spec.T_train:].copy()
    labels = np.zeros(spec.T_test, dtype=np.int64)
    target = int(round(spec.anomaly_rate * spec.T_test))
    segments: list[Segment] = []
    attempts = 0
    while labels.sum() < target:
        attempts += 1
        if attempts > 100_000:
            raise ConfigError("could not place anomalies without overlap; lower anomaly_rate")
        kind = spec.anomaly_types[rng.integers(len(spec.anomaly_types))]
        length = 1 if kind == "spike" else int(rng.integers(spec.span_range[0], spec.span_range[1] + 1))
        length = min(length, target - int(labels.sum()))
        start = int(rng.integers(0, spec.T_test - length + 1))
        # one clean step of separation keeps segments distinct
        lo_i, hi_i = max(start - 1, 0), min(start + length + 1, spec.T_test)
        if labels[lo_i:hi_i].any():
            continue
        mask = rng.random(spec.D) < 0.5
        if not mask.any():
            mask[rng.integers(spec.D)] = True
        feats = np.flatnonzero(mask)
        span = slice(start, start + length)
        sign = rng.choice([-1.0, 1.0], size=len(feats))
        if kind == "spike":
            k = rng.uniform(3.0, 6.0, size=len(feats))
            test[start, feats] += sign * k * feat_std[feats]
        elif kind == "level_shift":
            shift = rng.uniform(1.0, 2.0, size=len(feats)) * feat_std[feats]
            test[span, feats] += sign * shift
        else:
            # total noise std becomes 3x: add independent noise with variance 8 * noise_std^2
            test[span, feats] += rng.normal(0.0, np.sqrt(8.0) * spec.noise_std, size=(length, len(feats)))
        labels[span] = 1
        segments.append(Segment(kind, start, length, tuple(int(f) for f in feats)))

    names = tuple(f"x{d}" for d in range(spec.D))
    return SyntheticSeries(
        train=TimeSeriesDataset(noisy[: spec.T_train], np.zeros(spec.T_train, dtype=np.int64), names, "train"),
        test=TimeSeriesDataset(test, labels, names, "test"),
        clean_test=clean[spec.T_train:],
        segments=sorted(segments, key=lambda s: s.start),
    )


def synth(spec: SyntheticSpec, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``train.csv`` and ``test.csv`` into ``out_dir``; byte-identical for equal seeds."""
    series = generate(spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path, test_path = out_dir / "train.csv", out_dir / "test.csv"
    save_csv(series.train, train_path)
    save_csv(series.test, test_path)
    return train_path, test_path
