"""Threshold search, rank metrics and buffer-averaged VUS.

Point-adjusted metrics are intentionally absent.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from aster.errors import MetricError

DEFAULT_PERCENTILES = tuple(range(90, 100))


@dataclass
class ThresholdResult:
    tau: float
    percentile: float
    f1: float


@dataclass
class EvaluationReport:
    f1: float
    auroc: float
    aupr: float
    vus_auroc: float
    vus_aupr: float
    buffer_max: int
    tau: float
    percentile: float


def _check(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if scores.shape != labels.shape:
        raise MetricError(f"{scores.size} scores vs {labels.size} labels")
    if scores.size == 0:
        raise MetricError("empty score vector")
    if not np.all((labels == 0) | (labels == 1)):
        raise MetricError("labels must be binary")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores contain non-finite values")
    return scores, labels


def f1_score(predicted: np.ndarray, labels: np.ndarray) -> float:
    """Pointwise F1; 0 when nothing is predicted positive or nothing is positive."""
    tp = int(np.sum((predicted == 1) & (labels == 1)))
    fp = int(np.sum((predicted == 1) & (labels == 0)))
    fn = int(np.sum((predicted == 0) & (labels == 1)))
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def f1_with_threshold_search(
    scores_train: Optional[Sequence[float]],
    scores_test: Sequence[float],
    labels_test: Sequence[int],
    percentiles: Sequence[float] = DEFAULT_PERCENTILES,
    pool: bool = True,
) -> ThresholdResult:
    """Best test F1 over percentile thresholds of the score distribution.

    With ``pool`` the percentiles are taken over train and test scores together,
    otherwise over the test scores alone. Ties keep the lower percentile.
    """
    scores_test, labels_test = _check(scores_test, labels_test)
    reference = scores_test
    if pool and scores_train is not None and len(scores_train):
        reference = np.concatenate([np.asarray(scores_train, dtype=np.float64).reshape(-1), scores_test])
    if not len(percentiles):
        raise MetricError("no percentile candidates")
    best: Optional[ThresholdResult] = None
    for q in sorted(percentiles):
        tau = float(np.percentile(reference, q))
        f1 = f1_score((scores_test >= tau).astype(np.int64), labels_test)
        if best is None or f1 > best.f1:
            best = ThresholdResult(tau=tau, percentile=float(q), f1=f1)
    return best


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney form: P(score of a positive > score of a negative), ties count one half."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC is undefined for single-class labels")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Average precision: sum over distinct thresholds of (recall step) x precision."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("AUPR is undefined without positive labels")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    precision = tp / predicted
    recall = tp / n_pos
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def anomaly_segments(labels: Sequence[int]) -> list[tuple[int, int]]:
    """Half-open [start, stop) index ranges of contiguous positive labels."""
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    padded = np.r_[0, y, 0]
    edges = np.flatnonzero(np.diff(padded))
    return [(int(a), int(b)) for a, b in zip(edges[0::2], edges[1::2])]


def dilate_labels(labels: Sequence[int], radius: int) -> np.ndarray:
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    out = y.copy()
    for a, b in anomaly_segments(y):
        out[max(a - radius, 0):min(b + radius, y.size)] = 1
    return out


_BASE = {"roc": auroc, "pr": aupr}


def vus(
    scores: Sequence[float],
    labels: Sequence[int],
    curve: str = "roc",
    buffer_max: Optional[int] = None,
) -> float:
    """Mean of the base metric over label buffers 0..buffer_max.

    Buffer ``l`` widens every anomaly segment by ``ceil(l / 2)`` steps on both
    sides. ``buffer_max`` defaults to the longest anomaly segment. Slices where
    the dilated labels are single-class are skipped.
    """
    if curve not in _BASE:
        raise ValueError(f"curve must be 'roc' or 'pr', got {curve!r}")
    scores, labels = _check(scores, labels)
    segments = anomaly_segments(labels)
    if not segments:
        raise MetricError("VUS needs at least one anomaly segment")
    if buffer_max is None:
        buffer_max = max(b - a for a, b in segments)
    metric = _BASE[curve]
    values = []
    for ell in range(buffer_max + 1):
        dilated = dilate_labels(labels, math.ceil(ell / 2))
        if dilated.min() == dilated.max():
            continue
        values.append(metric(scores, dilated))
    if not values:
        raise MetricError("every VUS buffer slice is single-class")
    return float(np.mean(values))


def longest_anomaly(labels: Sequence[int]) -> int:
    segments = anomaly_segments(labels)
    return max((b - a for a, b in segments), default=0)


def evaluate(
    scores_test: Sequence[float],
    labels_test: Sequence[int],
    scores_train: Optional[Sequence[float]] = None,
    percentiles: Sequence[float] = DEFAULT_PERCENTILES,
    pool: bool = True,
    buffer_max: Optional[int] = None,
) -> EvaluationReport:
    threshold = f1_with_threshold_search(scores_train, scores_test, labels_test, percentiles, pool)
    ell = longest_anomaly(labels_test) if buffer_max is None else buffer_max
    return EvaluationReport(
        f1=threshold.f1,
        auroc=auroc(scores_test, labels_test),
        aupr=aupr(scores_test, labels_test),
        vus_auroc=vus(scores_test, labels_test, "roc", ell),
        vus_aupr=vus(scores_test, labels_test, "pr", ell),
        buffer_max=ell,
        tau=threshold.tau,
        percentile=threshold.percentile,
    )


REPORT_KEYS = tuple(EvaluationReport.__dataclass_fields__)


def write_report(report: EvaluationReport, path: str | Path) -> None:
    lines = [f"{k} = {v!r}" for k, v in asdict(report).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> EvaluationReport:
    values: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    missing = set(REPORT_KEYS) - set(values)
    if missing:
        raise MetricError(f"{path}: report lacks {sorted(missing)}")
    return EvaluationReport(
        **{k: (int(values[k]) if k == "buffer_max" else float(values[k])) for k in REPORT_KEYS}
    )


def average_reports(reports: Sequence[EvaluationReport]) -> EvaluationReport:
    """Field-wise mean, e.g. across the subsets of a multi-subset dataset."""
    if not reports:
        raise MetricError("nothing to average")
    fields_ = {k: float(np.mean([getattr(r, k) for r in reports])) for k in REPORT_KEYS}
    fields_["buffer_max"] = int(max(r.buffer_max for r in reports))
    return EvaluationReport(**fields_)
