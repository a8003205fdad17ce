from __future__ import annotations

import pytest

from aster.ablation import AXES, COLUMNS, apply_setting, read_ablation, run_ablation
from aster.config import ExperimentConfig
from aster.errors import ConfigError, RunDirectoryError
from aster.synth import SyntheticSpec, synth


@pytest.fixture(scope="module")
def base(tmp_path_factory):
    root = tmp_path_factory.mktemp("abl")
    train, test = synth(SyntheticSpec(T_train=300, T_test=200, seed=2), root / "data")
    cfg = ExperimentConfig()
    for key, value in {
        "embedding.M": 8,
        "embedding.backbone_depth": 1,
        "embedding.backbone_heads": 2,
        "perturbator.depth": 1,
        "perturbator.heads": 2,
        "classifier.depth": 1,
        "classifier.heads": 2,
        "train.epochs": 1,
        "train.batch_size": 32,
        "data.train": str(train),
        "data.test": str(test),
    }.items():
        cfg.set(key, value)
    return cfg


def test_axes():
    assert AXES["backbone_mode"] == ("linear_only", "frozen", "full_finetune", "lora")
    assert AXES["classifier_variant"] == ("transformer", "mlp")


def test_apply_setting_copies():
    cfg = ExperimentConfig()
    out = apply_setting(cfg, "window_size", 8)
    assert out.train.window_length == 8 and cfg.train.window_length == 4
    with pytest.raises(ConfigError):
        apply_setting(cfg, "depth", 1)


def test_classifier_axis_table(base, tmp_path):
    rows = run_ablation(base, "classifier_variant", tmp_path / "a")
    table = read_ablation(tmp_path / "a" / "ablation_classifier_variant.csv")
    assert len(rows) == len(table) == 2
    assert list(table[0]) == list(COLUMNS)
    assert [r["value"] for r in table] == ["transformer", "mlp"]
    for field in ("seed", "train_hash", "test_hash"):
        assert len({r[field] for r in table}) == 1
    assert (tmp_path / "a" / "classifier_variant=mlp" / "report.txt").is_file()


def test_backbone_axis_rows(base, tmp_path):
    table = run_ablation(base, "backbone_mode", tmp_path / "b")
    assert [r["value"] for r in table] == list(AXES["backbone_mode"])
    for r in table:
        assert 0.0 <= r["auroc"] <= 1.0


def test_rerun_is_bit_exact(base, tmp_path):
    run_ablation(base, "window_size", tmp_path / "x", values=[2, 8])
    run_ablation(base, "window_size", tmp_path / "y", values=[2, 8])
    a = (tmp_path / "x" / "ablation_window_size.csv").read_bytes()
    b = (tmp_path / "y" / "ablation_window_size.csv").read_bytes()
    assert a == b


def test_existing_output_refused(base, tmp_path):
    (tmp_path / "z").mkdir()
    (tmp_path / "z" / "f").write_text("x")
    with pytest.raises(RunDirectoryError):
        run_ablation(base, "classifier_variant", tmp_path / "z")
