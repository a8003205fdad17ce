"""CSV ingestion, train-only standard scaling and sliding windows."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from aster.errors import DataError

DEFAULT_LABEL_COLUMN = "label"
# std below this is treated as a dead channel
_DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class TimeSeriesDataset:
    values: np.ndarray  # (T, D)
    labels: Optional[np.ndarray] = None  # (T,) in {0, 1}
    feature_names: tuple[str, ...] = ()
    split_tag: str = "train"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"values must be a non-empty T x D matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("values contain non-finite entries")
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels).astype(np.int64)
            if labels.shape != (values.shape[0],):
                raise DataError(f"labels length {labels.shape} does not match T={values.shape[0]}")
            if not np.all((labels == 0) | (labels == 1)):
                raise DataError("labels must be binary")
            if self.split_tag == "train" and labels.any():
                raise DataError("train split must not contain anomalies (unsupervised setting)")
            object.__setattr__(self, "labels", labels)
        if self.split_tag not in ("train", "test"):
            raise DataError(f"unknown split tag {self.split_tag!r}")
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise DataError(f"{len(names)} feature names for {values.shape[1]} columns")
        object.__setattr__(self, "feature_names", names)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ScalerStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise DataError("mean and std must have the same length")
        if not np.all(std > 0):
            raise DataError("std entries must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


@dataclass(frozen=True)
class WindowBatch:
    windows: np.ndarray  # (B, L, D)
    end_indices: np.ndarray  # (B,) 1-based t of each window
    window_labels: np.ndarray = field(default=None)  # (B,) evaluation only

    def __len__(self) -> int:
        return self.windows.shape[0]


def load_csv(
    path: str | Path,
    label_column: Optional[str] = None,
    split_tag: str = "train",
) -> TimeSeriesDataset:
    """Read a headed CSV where each row is one time step.

    When ``label_column`` is None, a column literally named ``label`` is used as
    labels if present.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    if label_column is None and DEFAULT_LABEL_COLUMN in header:
        label_column = DEFAULT_LABEL_COLUMN
    if label_column is not None and label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not in header")
    label_idx = header.index(label_column) if label_column is not None else None
    feature_idx = [i for i in range(len(header)) if i != label_idx]
    if not feature_idx:
        raise DataError(f"{path}: no feature columns")
    if not rows:
        raise DataError(f"{path}: no data rows")

    values = np.empty((len(rows), len(feature_idx)))
    labels = np.empty(len(rows), dtype=np.int64) if label_idx is not None else None
    for r, row in enumerate(rows):
        # data row r is line r + 2 of the file (header is line 1)
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        for j, col in enumerate(feature_idx):
            cell = row[col].strip()
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise DataError(f"{path}: non-numeric value {cell!r} at row {r + 2}, column {header[col]!r}")
            values[r, j] = v
        if label_idx is not None:
            cell = row[label_idx].strip()
            if cell not in ("0", "1", "0.0", "1.0"):
                raise DataError(f"{path}: label {cell!r} at row {r + 2} is not 0 or 1")
            labels[r] = int(float(cell))

    if split_tag == "train" and labels is not None and labels.any():
        raise DataError(f"{path}: train split contains anomaly labels")
    return TimeSeriesDataset(
        values=values,
        labels=labels,
        feature_names=tuple(header[i] for i in feature_idx),
        split_tag=split_tag,
    )


def save_csv(data: TimeSeriesDataset, path: str | Path, float_format: str = "%.10g") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = list(data.feature_names)
        if data.labels is not None:
            header.append(DEFAULT_LABEL_COLUMN)
        writer.writerow(header)
        for t in range(data.T):
            row = [float_format % v for v in data.values[t]]
            if data.labels is not None:
                row.append(str(int(data.labels[t])))
            writer.writerow(row)


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fit_scaler(train: TimeSeriesDataset) -> ScalerStats:
    if train.split_tag != "train":
        raise DataError("scaler statistics must be fitted on the train split")
    if train.T == 0:
        raise DataError("cannot fit a scaler on an empty dataset")
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    std = np.where(std < _DEGENERATE_STD, 1.0, std)
    return ScalerStats(mean=mean, std=std)


def apply_scaler(data: TimeSeriesDataset, stats: ScalerStats) -> TimeSeriesDataset:
    if data.D != stats.mean.shape[0]:
        raise DataError(f"dataset has {data.D} features, scaler expects {stats.mean.shape[0]}")
    return replace(data, values=(data.values - stats.mean) / stats.std)


def invert_scaler(data: TimeSeriesDataset, stats: ScalerStats) -> TimeSeriesDataset:
    if data.D != stats.mean.shape[0]:
        raise DataError(f"dataset has {data.D} features, scaler expects {stats.mean.shape[0]}")
    return replace(data, values=data.values * stats.std + stats.mean)


def windowize(data: TimeSeriesDataset, L: int) -> WindowBatch:
    """All stride-1 windows of length ``L``; window i ends at time step ``L + i`` (1-based)."""
    if L < 1:
        raise DataError(f"window length must be >= 1, got {L}")
    if L > data.T:
        raise DataError(f"window length {L} exceeds series length {data.T}")
    n = data.T - L + 1
    windows = np.lib.stride_tricks.sliding_window_view(data.values, L, axis=0)
    windows = np.ascontiguousarray(windows.transpose(0, 2, 1))  # (n, L, D)
    end_indices = np.arange(L, data.T + 1, dtype=np.int64)
    if data.labels is None:
        window_labels = np.zeros(n, dtype=np.int64)
    else:
        covered = np.lib.stride_tricks.sliding_window_view(data.labels, L)
        window_labels = covered.max(axis=1).astype(np.int64)
    return WindowBatch(windows=windows, end_indices=end_indices, window_labels=window_labels)
