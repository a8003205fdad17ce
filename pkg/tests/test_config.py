from __future__ import annotations

import pytest

from aster.config import ExperimentConfig
from aster.errors import ConfigError


def test_save_load_round_trip(tmp_path):
    cfg = ExperimentConfig()
    cfg.set("embedding.backbone_mode", "frozen")
    cfg.set("train.window_length", 8)
    cfg.set("metrics.percentiles", (95, 99))
    cfg.set("data.train", "some/dir/train.csv")
    cfg.save(tmp_path / "a.txt")
    loaded = ExperimentConfig.load(tmp_path / "a.txt")
    assert loaded == cfg
    loaded.save(tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_loads_accepts_bare_words_comments_and_blank_lines():
    cfg = ExperimentConfig.loads("# comment\n\nembedding.backbone_mode = linear_only\ntrain.epochs = 3\n")
    assert cfg.embedding.backbone_mode == "linear_only" and cfg.train.epochs == 3


def test_values_are_coerced_to_field_types():
    cfg = ExperimentConfig()
    cfg.set("train.learning_rate", "1")
    assert cfg.train.learning_rate == 1.0 and isinstance(cfg.train.learning_rate, float)
    cfg.set("metrics.pool", "false")
    assert cfg.metrics.pool is False
    cfg.set("train.epochs", 5.0)
    assert cfg.train.epochs == 5 and isinstance(cfg.train.epochs, int)


def test_backbone_alias():
    cfg = ExperimentConfig()
    cfg.set("embedding.backbone_mode", "full")
    assert cfg.embedding.backbone_mode == "full_finetune"


@pytest.mark.parametrize("key", ["nope.x", "train.nope", "train", "embedding.D", "classifier.M", "perturbator.M", "classifier.window_length"])
def test_unknown_and_derived_keys_rejected(key):
    with pytest.raises(ConfigError):
        ExperimentConfig().set(key, 1)


def test_bad_values_rejected():
    cfg = ExperimentConfig()
    with pytest.raises(ConfigError):
        cfg.set("train.epochs", "2.5")
    with pytest.raises(ConfigError):
        cfg.set("metrics.pool", "maybe")
    with pytest.raises(ConfigError, match="line 2"):
        ExperimentConfig.loads("train.epochs = 1\nthis line has no separator\n")


def test_validate_catches_bad_combinations():
    cfg = ExperimentConfig()
    cfg.set("run.dtype", "float16")
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = ExperimentConfig()
    cfg.set("embedding.M", 30)  # not divisible by 4 heads
    with pytest.raises(ConfigError):
        cfg.validate()


def test_model_config_shares_width_and_window():
    cfg = ExperimentConfig()
    cfg.set("embedding.M", 16)
    cfg.set("train.window_length", 6)
    m = cfg.model_config(D=3)
    assert m.embedding.D == 3
    assert m.perturbator.M == m.classifier.M == 16
    assert m.classifier.window_length == 6


def test_missing_file():
    with pytest.raises(ConfigError):
        ExperimentConfig.load("/nonexistent/config.txt")
