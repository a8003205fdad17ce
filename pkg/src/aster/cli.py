"""Command-line entry point: ``aster {synth,train,score,evaluate,ablate,analyze}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from aster.errors import AsterError, ConfigError, RunDirectoryError


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--seed", type=int, help="random seed (train.seed, or synth.seed for synth)")
    p.add_argument("--data-train", help="training CSV (normal data only)")
    p.add_argument("--data-test", help="labelled test CSV")
    p.add_argument("--out", help="output directory (default: a timestamped directory under $ASTER_RUN_ROOT)")
    p.add_argument("--window", type=int, help="window length L")
    p.add_argument("--backbone", choices=["linear_only", "frozen", "full", "full_finetune", "lora"])
    p.add_argument("--classifier", choices=["transformer", "mlp"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch training progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aster", description="Window-level time-series anomaly detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic train/test CSV pair")
    _common(p)
    p.add_argument("--T-train", type=int)
    p.add_argument("--T-test", type=int)
    p.add_argument("--D", type=int)
    p.add_argument("--anomaly-rate", type=float)
    p.add_argument("--noise-std", type=float)

    p = sub.add_parser("train", help="train a model into a new run directory")
    _common(p)

    for name, text in (
        ("score", "write per-time-step score files for a trained run"),
        ("evaluate", "compute the metric report for a trained run"),
        ("analyze", "export cosine-distance, latent-statistics and PCA tables"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--run", help="run directory produced by train (defaults to --out)")
        if name == "evaluate":
            p.add_argument(
                "--average", nargs="+", metavar="REPORT",
                help="average existing report files into --out instead of evaluating a run",
            )
        if name == "analyze":
            p.add_argument("--components", type=int, default=2)
            p.add_argument("--per-group", type=int, default=500)

    p = sub.add_parser("ablate", help="compare settings along one axis")
    _common(p)
    p.add_argument("--axis", required=True, choices=["backbone_mode", "classifier_variant", "window_size"])
    p.add_argument("--values", nargs="+", help="subset of axis values to run")
    return parser


def resolve_config(args: argparse.Namespace, run_dir: Optional[Path] = None):
    """Config file (or the run's snapshot), then ``--set`` overrides, then dedicated flags."""
    from aster.config import ExperimentConfig
    from aster.pipeline import CONFIG_SNAPSHOT

    if args.config:
        config = ExperimentConfig.load(args.config)
    elif run_dir is not None and (run_dir / CONFIG_SNAPSHOT).is_file():
        config = ExperimentConfig.load(run_dir / CONFIG_SNAPSHOT)
    else:
        config = ExperimentConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        config.set(key.strip(), value.strip())
    flags = {
        "data.train": args.data_train,
        "data.test": args.data_test,
        "train.window_length": args.window,
        "embedding.backbone_mode": args.backbone,
        "classifier.variant": args.classifier,
        "train.epochs": args.epochs,
        ("synth.seed" if args.command == "synth" else "train.seed"): args.seed,
    }
    if args.command == "synth":
        flags.update({
            "synth.T_train": args.T_train,
            "synth.T_test": args.T_test,
            "synth.D": args.D,
            "synth.anomaly_rate": args.anomaly_rate,
            "synth.noise_std": args.noise_std,
        })
    for key, value in flags.items():
        if value is not None:
            config.set(key, value)
    if args.out:
        config.run.out = args.out
    return config


def _run_dir(args: argparse.Namespace) -> Path:
    target = args.run or args.out
    if not target:
        raise ConfigError("give the run directory with --run")
    return Path(target)


def cmd_synth(args: argparse.Namespace) -> int:
    from aster.pipeline import RunDirectory
    from aster.synth import synth

    config = resolve_config(args)
    config.synth.validate()
    run = RunDirectory.create(config.run.out, tag="synth")
    train_path, test_path = synth(config.synth, run.path)
    run.record("synth", seed=config.synth.seed, synth=asdict(config.synth))
    print(f"train: {train_path}")
    print(f"test: {test_path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from aster.pipeline import RunDirectory, train_run

    config = resolve_config(args)
    config.validate()
    run = RunDirectory.create(config.run.out, tag="train")
    checkpoint = train_run(config, run)
    print(f"run: {run.path}")
    print(f"checkpoint: {checkpoint}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    from aster.pipeline import RunDirectory, score_run

    run = RunDirectory.open(_run_dir(args))
    config = resolve_config(args, run.path)
    for split, series in score_run(config, run).items():
        print(f"{split}: {len(series.scores)} scores")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    from aster.metrics import average_reports, read_report, write_report
    from aster.pipeline import RunDirectory, evaluate_run

    if args.average:
        report = average_reports([read_report(p) for p in args.average])
        if args.out:
            out = Path(args.out)
            if out.exists():
                raise RunDirectoryError(f"{out} already exists")
            write_report(report, out)
    else:
        run = RunDirectory.open(_run_dir(args))
        run.require_checkpoint()
        config = resolve_config(args, run.path)
        report = evaluate_run(config, run)
    for key, value in asdict(report).items():
        print(f"{key} = {value!r}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    from aster.ablation import AXES, run_ablation

    config = resolve_config(args)
    config.validate()
    values = None
    if args.values:
        kind = type(AXES[args.axis][0])
        values = [kind(v) for v in args.values]
    out = config.run.out
    if out is None:
        from aster.config import default_run_root

        out = default_run_root() / f"{time.strftime('%Y%m%d-%H%M%S')}-ablate-{args.axis}"
    rows = run_ablation(config, args.axis, out, values)
    for row in rows:
        print(f"{row['value']}: auroc={row['auroc']:.4f} f1={row['f1']:.4f} aupr={row['aupr']:.4f}")
    print(f"table: {Path(out) / f'ablation_{args.axis}.csv'}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    from aster.pipeline import RunDirectory, analyze_run

    run = RunDirectory.open(_run_dir(args))
    config = resolve_config(args, run.path)
    for name, path in analyze_run(config, run, k=args.components, per_group=args.per_group).items():
        print(f"{name}: {path}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    from aster.pipeline import set_invocation

    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    set_invocation(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except AsterError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
