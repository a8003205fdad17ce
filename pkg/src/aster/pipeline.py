"""Run directories and the train / score / evaluate steps shared by the CLI and the ablation harness.

A run directory is append-only: every artifact is written once, and each
subcommand appends one JSON line to ``manifest.jsonl`` recording its seed,
configuration snapshot and the content hashes of the data it read.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch

from aster import __version__
from aster.config import ExperimentConfig, default_run_root
from aster.analysis import pca_export
from aster.data import DEFAULT_LABEL_COLUMN, TimeSeriesDataset, apply_scaler, file_hash, fit_scaler, load_csv, windowize
from aster.errors import ConfigError, DataError, MissingCheckpointError, RunDirectoryError
from aster.metrics import EvaluationReport, evaluate, write_report
from aster.model import DTYPES, load_checkpoint
from aster.perturbator import sample_latent
from aster.scoring import ScoreSeries, read_scores, score_series, write_scores
from aster.training import CHECKPOINT_DIR, EPOCH_LOG, fit, read_epoch_log

MANIFEST = "manifest.jsonl"
CONFIG_SNAPSHOT = "config.txt"
SCORES_TEST = "scores_test.csv"
SCORES_TRAIN = "scores_train.csv"
REPORT = "report.txt"


_INVOCATION: Optional[list[str]] = None


def set_invocation(argv: Sequence[str]) -> None:
    """Command line recorded in run manifests (defaults to ``sys.argv``)."""
    global _INVOCATION
    _INVOCATION = list(argv)


class RunDirectory:
    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)

    @classmethod
    def create(cls, path: Optional[str | Path] = None, tag: str = "run") -> "RunDirectory":
        """Create a fresh directory; an explicit path must not exist or must be empty."""
        if path is None:
            root = default_run_root()
            stamp = time.strftime("%Y%m%d-%H%M%S")
            path = root / f"{stamp}-{tag}"
            n = 1
            while path.exists():
                n += 1
                path = root / f"{stamp}-{tag}-{n}"
        path = Path(path)
        if path.exists() and (not path.is_dir() or any(path.iterdir())):
            raise RunDirectoryError(f"run directory {path} already exists and is not empty")
        path.mkdir(parents=True, exist_ok=True)
        return cls(path)

    @classmethod
    def open(cls, path: str | Path) -> "RunDirectory":
        path = Path(path)
        if not path.is_dir():
            raise RunDirectoryError(f"no run directory at {path}")
        return cls(path)

    def file(self, name: str) -> Path:
        """Path for a new artifact; refuses to overwrite."""
        target = self.path / name
        if target.exists():
            raise RunDirectoryError(f"{target} already exists; run directories are append-only")
        return target

    @property
    def checkpoint(self) -> Path:
        return self.path / CHECKPOINT_DIR

    def require_checkpoint(self) -> Path:
        if not (self.checkpoint / "manifest.json").is_file():
            raise MissingCheckpointError(f"missing checkpoint: {self.path} has no {CHECKPOINT_DIR}/")
        return self.checkpoint

    def record(self, command: str, config: Optional[ExperimentConfig] = None, **extra: Any) -> dict[str, Any]:
        entry: dict[str, Any] = {
            "command": command,
            "time": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "version": __version__,
            "argv": list(_INVOCATION) if _INVOCATION is not None else sys.argv[1:],
        }
        if config is not None:
            entry["seed"] = config.seed
            entry["config"] = dict(config.items())
        entry.update(extra)
        with (self.path / MANIFEST).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, default=_jsonable, sort_keys=True) + "\n")
        return entry

    def manifest(self) -> list[dict[str, Any]]:
        path = self.path / MANIFEST
        if not path.is_file():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _jsonable(value: Any) -> Any:
    if isinstance(value, (tuple, set)):
        return list(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not serialisable: {type(value).__name__}")


def dataset_hashes(config: ExperimentConfig) -> dict[str, str]:
    out = {}
    for split in ("train", "test"):
        path = getattr(config.data, split)
        if path:
            out[split] = file_hash(path)
    return out


def load_split(config: ExperimentConfig, split: str) -> TimeSeriesDataset:
    path = getattr(config.data, split)
    if not path:
        raise ConfigError(f"no {split} data given (set data.{split} or --data-{split})")
    label_column = config.data.label_column
    if split == "train" and label_column == DEFAULT_LABEL_COLUMN:
        label_column = None  # optional in train files; picked up when present
    return load_csv(path, label_column=label_column, split_tag=split)


def train_run(config: ExperimentConfig, run: RunDirectory) -> Path:
    config.validate()
    train = load_split(config, "train")
    scaler = fit_scaler(train)
    model_config = config.model_config(train.D)
    config.save(run.file(CONFIG_SNAPSHOT))
    hashes = dataset_hashes(config)
    run.record("train", config, data_hashes=hashes)
    return fit(
        apply_scaler(train, scaler),
        model_config,
        config.train,
        run.path,
        scaler=scaler,
        metadata={"seed": config.seed, "data_hashes": hashes},
    )


def score_run(config: ExperimentConfig, run: RunDirectory, splits: tuple[str, ...] = ("test", "train")) -> dict[str, ScoreSeries]:
    model, scaler, meta = load_checkpoint(run.require_checkpoint())
    if scaler is None:
        raise DataError("checkpoint carries no scaler statistics")
    L = int(meta.get("train", {}).get("window_length", config.train.window_length))
    out = {}
    for split in splits:
        if split == "train" and not config.data.train:
            continue
        data = apply_scaler(load_split(config, split), scaler)
        series = score_series(data, model, L)
        write_scores(series, run.file(SCORES_TEST if split == "test" else SCORES_TRAIN))
        out[split] = series
    run.record("score", config, data_hashes=dataset_hashes(config), window_length=L)
    return out


def evaluate_run(config: ExperimentConfig, run: RunDirectory) -> EvaluationReport:
    run.require_checkpoint()
    test_scores = run.path / SCORES_TEST
    if not test_scores.is_file():
        score_run(config, run)
    test = read_scores(test_scores)
    train_path = run.path / SCORES_TRAIN
    train = read_scores(train_path) if train_path.is_file() else None
    labels = load_split(config, "test").labels
    if labels is None:
        raise DataError("test data has no label column")
    if len(labels) != len(test.scores):
        raise DataError(f"{len(test.scores)} scores for {len(labels)} test labels")
    m = config.metrics
    if m.exclude_extrapolated:
        s_test, labels = test.genuine(), labels[~test.extrapolated]
        s_train = None if train is None else train.genuine()
    else:
        s_test, s_train = test.scores, None if train is None else train.scores
    report = evaluate(s_test, labels, s_train, m.percentiles, m.pool, m.buffer_max)
    write_report(report, run.file(REPORT))
    run.record("evaluate", config, data_hashes=dataset_hashes(config), report=asdict(report))
    return report


def run_experiment(config: ExperimentConfig, run: RunDirectory) -> EvaluationReport:
    train_run(config, run)
    score_run(config, run)
    return evaluate_run(config, run)


COSINE_CURVE = "cosine_curve.csv"
LATENT_STATS = "latent_stats.csv"
PCA_TABLE = "pca.csv"
PCA_VARIANCE = "pca_variance.csv"


def _subsample(n: int, limit: int) -> np.ndarray:
    # evenly spaced, deterministic
    return np.unique(np.linspace(0, n - 1, num=min(n, limit)).round().astype(np.int64)) if n else np.empty(0, np.int64)


@torch.no_grad()
def classifier_features(config: ExperimentConfig, run: RunDirectory, per_group: int = 500) -> tuple[np.ndarray, list[str]]:
    """Flattened classifier inputs for normal and anomalous test windows and for pseudo-anomalies.

    Pseudo-anomalies are decoded from posterior samples of the normal windows.
    """
    model, scaler, meta = load_checkpoint(run.require_checkpoint())
    model.eval()
    L = int(meta.get("train", {}).get("window_length", config.train.window_length))
    test = apply_scaler(load_split(config, "test"), scaler)
    batch = windowize(test, L)
    dtype = DTYPES[model.config.dtype]
    labels = batch.window_labels if batch.window_labels is not None else np.zeros(len(batch), np.int64)
    normal = np.flatnonzero(labels == 0)
    normal = normal[_subsample(len(normal), per_group)]
    anomal = np.flatnonzero(labels == 1)
    anomal = anomal[_subsample(len(anomal), per_group)]

    C_normal = model.phi(torch.from_numpy(batch.windows[normal]).to(dtype))
    C_anomal = model.phi(torch.from_numpy(batch.windows[anomal]).to(dtype))
    rng = torch.Generator().manual_seed(config.seed)
    z = sample_latent(model.perturbator.q_phi(C_normal), rng).z
    C_pseudo = model.perturbator.p_psi(z)

    feats = torch.cat([C_normal, C_anomal, C_pseudo]).flatten(1).to(torch.float64).numpy()
    groups = ["normal"] * len(C_normal) + ["anomaly"] * len(C_anomal) + ["pseudo"] * len(C_pseudo)
    return feats, groups


def analyze_run(config: ExperimentConfig, run: RunDirectory, k: int = 2, per_group: int = 500) -> dict[str, Path]:
    """Export the cosine-distance curve, latent statistics and a PCA table of classifier inputs."""
    log_path = run.path / EPOCH_LOG
    if not log_path.is_file():
        raise MissingCheckpointError(f"missing checkpoint: {run.path} has no {EPOCH_LOG}")
    log = read_epoch_log(log_path)
    out = {"cosine": run.file(COSINE_CURVE), "latent": run.file(LATENT_STATS)}
    _write_rows(out["cosine"], ("epoch", "cosine_distance"), [(int(r["epoch"]), r["cosine_distance"]) for r in log])
    _write_rows(
        out["latent"], ("epoch", "mu_mean", "sigma_mean"), [(int(r["epoch"]), r["mu_mean"], r["sigma_mean"]) for r in log]
    )
    if config.data.test:
        feats, groups = classifier_features(config, run, per_group)
        pca = pca_export(feats, groups, k)
        out["pca"] = run.file(PCA_TABLE)
        out["pca_variance"] = run.file(PCA_VARIANCE)
        _write_rows(out["pca"], ("group", *[f"pc{j + 1}" for j in range(k)]), [(g, *p) for g, p in zip(groups, pca.projections)])
        _write_rows(
            out["pca_variance"],
            ("component", "explained_variance", "explained_variance_ratio"),
            [(j + 1, v, r) for j, (v, r) in enumerate(zip(pca.explained_variance, pca.explained_variance_ratio))],
        )
    run.record("analyze", config, outputs={k_: p.name for k_, p in out.items()})
    return out


def _write_rows(path: Path, header: tuple[str, ...], rows: list[tuple]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
