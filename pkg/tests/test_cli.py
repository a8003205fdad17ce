from __future__ import annotations

import json

import pytest

from aster.cli import main
from aster.config import ExperimentConfig
from aster.metrics import read_report

SMALL = """\
embedding.M = 8
embedding.backbone_depth = 1
embedding.backbone_heads = 2
perturbator.depth = 1
perturbator.heads = 2
classifier.depth = 1
classifier.heads = 2
train.epochs = 2
train.batch_size = 32
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--T-train", "300", "--T-test", "200", "--seed", "3"]) == 0
    (root / "small.txt").write_text(
        SMALL + f"data.train = {root / 'data' / 'train.csv'}\ndata.test = {root / 'data' / 'test.csv'}\n"
    )
    return root


@pytest.fixture(autouse=True)
def run_root(tmp_path, monkeypatch):
    monkeypatch.setenv("ASTER_RUN_ROOT", str(tmp_path / "runs"))


def test_train_score_evaluate(workspace, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", str(workspace / "small.txt"), "--out", str(run), "--seed", "7"]) == 0
    assert (run / "checkpoint" / "tensors.bin").is_file()
    assert main(["score", "--run", str(run)]) == 0
    assert (run / "scores_test.csv").is_file() and (run / "scores_train.csv").is_file()
    assert main(["evaluate", "--run", str(run)]) == 0
    out = capsys.readouterr().out
    assert "auroc = " in out and "f1 = " in out
    report = read_report(run / "report.txt")
    assert 0.0 <= report.auroc <= 1.0

    records = [json.loads(line) for line in (run / "manifest.jsonl").read_text().splitlines()]
    assert [r["command"] for r in records] == ["train", "score", "evaluate"]
    assert all(r["seed"] == 7 for r in records)
    assert set(records[0]["data_hashes"]) == {"train", "test"}
    assert records[0]["argv"][records[0]["argv"].index("--seed") + 1] == "7"
    assert records[0]["config"]["train.seed"] == 7
    snapshot = ExperimentConfig.load(run / "config.txt")
    assert snapshot.train.seed == 7 and snapshot.embedding.M == 8


def test_evaluate_without_checkpoint(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["evaluate", "--run", str(tmp_path / "empty")]) == 4
    assert "missing checkpoint" in capsys.readouterr().err


def test_score_without_checkpoint(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["score", "--run", str(tmp_path / "empty")]) == 4


def test_run_directory_is_never_overwritten(workspace, tmp_path, capsys):
    out = tmp_path / "busy"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["train", "--config", str(workspace / "small.txt"), "--out", str(out)]) == 7
    assert (out / "keep.txt").read_text() == "x"


def test_default_run_root(workspace, tmp_path):
    assert main(["train", "--config", str(workspace / "small.txt"), "--epochs", "1"]) == 0
    runs = list((tmp_path / "runs").iterdir())
    assert len(runs) == 1 and (runs[0] / "checkpoint").is_dir()


def test_missing_data_is_a_data_or_config_error(tmp_path):
    code = main(["train", "--data-train", str(tmp_path / "nope.csv"), "--data-test", str(tmp_path / "x.csv"), "--out", str(tmp_path / "r")])
    assert code in (2, 3)


def test_bad_set_value(tmp_path, capsys):
    assert main(["train", "--set", "train.nope=1", "--out", str(tmp_path / "r")]) == 2
    assert "error [invalid config]" in capsys.readouterr().err


def test_unknown_flag_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code != 0


def test_average_reports(tmp_path, capsys):
    from aster.metrics import EvaluationReport, write_report

    a = EvaluationReport(f1=0.2, auroc=0.6, aupr=0.3, vus_auroc=0.5, vus_aupr=0.4, tau=1.0, percentile=95, buffer_max=4)
    b = EvaluationReport(f1=0.4, auroc=0.8, aupr=0.5, vus_auroc=0.7, vus_aupr=0.6, tau=2.0, percentile=99, buffer_max=4)
    write_report(a, tmp_path / "a.txt")
    write_report(b, tmp_path / "b.txt")
    assert main(["evaluate", "--average", str(tmp_path / "a.txt"), str(tmp_path / "b.txt"), "--out", str(tmp_path / "m.txt")]) == 0
    avg = read_report(tmp_path / "m.txt")
    assert avg.auroc == pytest.approx(0.7) and avg.f1 == pytest.approx(0.3)


def test_analyze(workspace, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--config", str(workspace / "small.txt"), "--out", str(run), "--epochs", "1"]) == 0
    assert main(["analyze", "--run", str(run), "--per-group", "50"]) == 0
    header = (run / "pca.csv").read_text().splitlines()[0]
    assert header == "group,pc1,pc2"
    groups = {line.split(",")[0] for line in (run / "pca.csv").read_text().splitlines()[1:]}
    assert groups == {"normal", "anomaly", "pseudo"}
    assert (run / "cosine_curve.csv").read_text().splitlines()[0].startswith("epoch")


def test_synth_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--T-train", "200", "--T-test", "100", "--seed", "5"]) == 0
    for f in ("train.csv", "test.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
