"""Controlled comparisons: one axis varied, seed and data held fixed."""

from __future__ import annotations

import copy
import csv
from pathlib import Path
from typing import Any, Sequence

from aster.classifier import VARIANTS
from aster.config import ExperimentConfig
from aster.embedding import BACKBONE_MODES
from aster.errors import ConfigError
from aster.pipeline import RunDirectory, dataset_hashes, run_experiment

AXES: dict[str, tuple[Any, ...]] = {
    "backbone_mode": BACKBONE_MODES,
    "classifier_variant": VARIANTS,
    "window_size": (2, 4, 8, 16, 32, 64),
}
METRIC_COLUMNS = ("f1", "auroc", "aupr", "vus_auroc", "vus_aupr")
COLUMNS = ("axis", "value", "seed", "train_hash", "test_hash", *METRIC_COLUMNS)


def apply_setting(config: ExperimentConfig, axis: str, value: Any) -> ExperimentConfig:
    cfg = copy.deepcopy(config)
    if axis == "backbone_mode":
        cfg.set("embedding.backbone_mode", value)
    elif axis == "classifier_variant":
        cfg.set("classifier.variant", value)
    elif axis == "window_size":
        cfg.set("train.window_length", int(value))
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {tuple(AXES)}")
    return cfg


def run_ablation(
    config: ExperimentConfig,
    axis: str,
    out_dir: str | Path,
    values: Sequence[Any] | None = None,
) -> list[dict[str, Any]]:
    """Train and evaluate every setting of ``axis`` into ``out_dir/<axis>=<value>/``.

    Writes ``out_dir/ablation_<axis>.csv`` and returns its rows.
    """
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {tuple(AXES)}")
    values = AXES[axis] if values is None else tuple(values)
    root = RunDirectory.create(out_dir, tag=f"ablate-{axis}")
    hashes = dataset_hashes(config)
    rows = []
    for value in values:
        cfg = apply_setting(config, axis, value)
        run = RunDirectory.create(root.path / f"{axis}={value}")
        report = run_experiment(cfg, run)
        rows.append({
            "axis": axis,
            "value": value,
            "seed": cfg.seed,
            "train_hash": hashes.get("train", ""),
            "test_hash": hashes.get("test", ""),
            **{k: getattr(report, k) for k in METRIC_COLUMNS},
        })
    table = root.file(f"ablation_{axis}.csv")
    with table.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    root.record("ablate", config, axis=axis, values=list(values), data_hashes=hashes)
    return rows


def read_ablation(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
