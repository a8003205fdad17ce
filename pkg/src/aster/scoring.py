"""Inference: assemble a per-time-step anomaly score series from window scores."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from aster.data import TimeSeriesDataset, windowize
from aster.errors import DataError, IncompatibleCheckpointError
from aster.model import DTYPES, AsterModel

SCORE_COLUMNS = ("t", "score", "extrapolated")


@dataclass
class ScoreSeries:
    scores: np.ndarray  # (T,) aligned with time steps
    extrapolated: np.ndarray  # (T,) bool, True for the t < L entries filled by the edge rule
    coverage_start: int  # first genuinely scored step (1-based), equals L

    def genuine(self) -> np.ndarray:
        return self.scores[~self.extrapolated]


@torch.no_grad()
def window_scores(model: AsterModel, windows: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    model.eval()
    dtype = DTYPES[model.config.dtype]
    out = []
    for start in range(0, len(windows), batch_size):
        batch = torch.as_tensor(np.array(windows[start:start + batch_size]), dtype=dtype)
        out.append(model.score(batch).to(torch.float64).numpy())
    return np.concatenate(out) if out else np.empty(0)


def score_series(data: TimeSeriesDataset, model: AsterModel, L: int, batch_size: int = 1024) -> ScoreSeries:
    """Raw classifier score for every window end ``t = L..T``; steps before ``L`` copy the first score."""
    if data.D != model.config.embedding.D:
        raise IncompatibleCheckpointError(f"checkpoint expects D={model.config.embedding.D}, data has D={data.D}")
    if model.config.classifier.variant == "mlp" and model.config.classifier.window_length != L:
        raise IncompatibleCheckpointError(
            f"mlp classifier was built for L={model.config.classifier.window_length}, got L={L}"
        )
    batch = windowize(data, L)
    genuine = window_scores(model, batch.windows, batch_size)
    scores = np.concatenate([np.full(L - 1, genuine[0]), genuine])
    extrapolated = np.arange(data.T) < L - 1
    return ScoreSeries(scores=scores, extrapolated=extrapolated, coverage_start=L)


def write_scores(series: ScoreSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        for i, (s, e) in enumerate(zip(series.scores, series.extrapolated)):
            writer.writerow([i + 1, repr(float(s)), int(e)])


def read_scores(path: str | Path) -> ScoreSeries:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or tuple(rows[0]) != SCORE_COLUMNS:
        raise DataError(f"{path}: not a score file")
    scores = np.array([float(r["score"]) for r in rows])
    extrapolated = np.array([r["extrapolated"] == "1" for r in rows])
    coverage_start = int(np.argmin(extrapolated)) + 1 if extrapolated.any() else 1
    return ScoreSeries(scores, extrapolated, coverage_start)
