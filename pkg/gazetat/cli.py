"""``gazetat`` command line: data generation, training, evaluation and robustness tools."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from gazetat import runs
from gazetat.checkpoint import load_checkpoint
from gazetat.config import RunConfig
from gazetat.errors import GazeTatError
from gazetat.gazenet import GazeNet
from gazetat.pruning import prune_report, score_histograms, score_model, select_prune_set
from gazetat.robustness import delta_stats, msd_table, pgd_attack, sequence_predictions
from gazetat.synth import GazeDataset, generate, generate_sequences
from gazetat.tensor import no_grad, set_default_dtype
from gazetat.training import evaluate, mean_euclidean_error, predictions, run_dwo, run_plain, run_tat

logger = logging.getLogger(__name__)

SCHEMES = ("plain", "tat", "dwo", "tat+dwo")


def _config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    config = config.with_overrides(args.set or [])
    if args.seed is not None:
        config = config.with_overrides([f"seed={args.seed}"])
    return config


def _load_model(path) -> GazeNet:
    model, _ = load_checkpoint(path)
    set_default_dtype(model.head.weight.dtype)
    return model


def _print_table(frame: pd.DataFrame) -> None:
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))


def cmd_synth_data(args) -> int:
    config = _config(args)
    path = generate(config.synth(), args.out)
    (Path(path) / runs.CONFIG_FILE).write_text(config.to_text())
    print(f"dataset written to {path}")
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    run_dir = runs.start_run(args.run, config)
    runs.configure_logging(args.verbose, run_dir / runs.LOG_FILE)
    set_default_dtype(config.precision)
    runs.write_manifest(run_dir, scheme=args.scheme, seed=config.seed, data=str(Path(args.data).resolve()),
                        git=runs.git_describe(), started=runs.now())
    dataset = GazeDataset(args.data)
    tat = config.tat()
    common = {"run_dir": run_dir, "progress": args.progress}
    if args.scheme == "plain":
        result = run_plain(tat, dataset, **common)
    elif args.scheme == "tat":
        result = run_tat(tat, dataset, **common)
    elif args.scheme == "dwo":
        result = run_dwo(tat, dataset, config.pgd(), **common)
    else:
        result = run_tat(tat, dataset, config.pgd(), **common)
    runs.write_training_artifacts(run_dir, result, args.scheme, config.seed)
    predictions(result.model, dataset.split("test"), tat.eval_batch_size).to_csv(run_dir / "predictions.csv", index=False)
    summary = {}
    sequences = dataset.sequences()
    if sequences:
        preds = sequence_predictions(result.model, sequences, config.msd_workers)
        table = msd_table(preds)
        preds.to_csv(run_dir / "msd_predictions.csv", index=False)
        table.to_csv(run_dir / "msd_sequences.csv", index=False)
        summary["msd_cm"] = float(table["sigma"].mean())
    runs.write_manifest(run_dir, finished=runs.now(), **summary)
    print(f"final val error (cm): {result.final_val_error!r}")
    print(f"final test error (cm): {float(result.generations['test_err_cm'].iloc[-1])!r}")
    if "msd_cm" in summary:
        print(f"MSD (cm): {summary['msd_cm']!r}")
    print(f"run written to {run_dir}")
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    split = GazeDataset(args.data).split(args.split)
    if args.dump_predictions:
        frame = predictions(model, split, args.batch_size)
        frame.to_csv(args.dump_predictions, index=False)
        error = float(frame["error_cm"].mean())
    else:
        error = evaluate(model, split, args.batch_size)
    print(f"{args.split} error (cm): {error!r}")
    return 0


def cmd_msd(args) -> int:
    model = _load_model(args.checkpoint)
    dataset = GazeDataset(args.data)
    if args.noise_std is not None or args.jitter_px is not None:
        jitter = args.jitter_px if args.jitter_px is not None else 0
        sequences = generate_sequences(dataset.synth_config, noise_std=args.noise_std, jitter_px=jitter)
    else:
        sequences = dataset.sequences()
    preds = sequence_predictions(model, sequences, args.workers)
    table = msd_table(preds)
    if args.dump:
        preds.to_csv(args.dump, index=False)
    _print_table(table)
    print(f"MSD (cm): {float(table['sigma'].mean())!r}")
    return 0


def cmd_attack(args) -> int:
    config = _config(args)
    model = _load_model(args.checkpoint)
    split = GazeDataset(args.data).split(args.split)
    positions = np.arange(min(args.limit, len(split)))
    batch = split.batch(positions, model.codec)
    adversarial = pgd_attack(model, batch.inputs, batch.labels, config.pgd())
    stats = delta_stats(batch.inputs, adversarial)
    clean_err = mean_euclidean_error(_predict(model, batch.inputs), batch.gt)
    adv_err = mean_euclidean_error(_predict(model, adversarial), batch.gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out / "adversarial.npz", records=batch.records, face=adversarial[0],
                        left_eye=adversarial[1], right_eye=adversarial[2])
    stats.to_csv(out / "delta_stats.csv", index=False)
    _print_table(stats)
    print(f"clean error (cm): {clean_err:.4f}  adversarial error (cm): {adv_err:.4f}  samples: {len(batch)}")
    return 0


def _predict(model: GazeNet, inputs) -> np.ndarray:
    model.eval()
    with no_grad():
        return model.predict_gaze(model(*inputs))


def cmd_prune_report(args) -> int:
    config = _config(args)
    model = _load_model(args.checkpoint)
    scores = score_model(model, args.metric or config.prune_metric)
    p = config.prune_ratio if args.p is None else args.p
    p_max = config.prune_cap if args.p_max is None else args.p_max
    selection = select_prune_set(scores, p, p_max)
    report = prune_report(scores, selection)
    summary = report.groupby("layer", sort=False).agg(
        filters=("filter", "size"), selected=("selected", "sum"), mean_score=("score", "mean"), max_score=("score", "max"),
    ).reset_index()
    _print_table(summary)
    print()
    histograms = score_histograms(report, args.bins)
    _print_table(histograms[histograms["count"] > 0])
    print(f"selected {selection.count} of quota {selection.quota} ({len(report)} filters)")
    if args.out:
        report.to_csv(args.out, index=False)
    return 0


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, help="seed for every random stream")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazetat", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    # -v is also accepted after the subcommand; unset there, it keeps the top-level count
    verbosity = argparse.ArgumentParser(add_help=False)
    verbosity.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[verbosity], help="render the synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    _add_config_args(p)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", parents=[verbosity], help="train a model and write a run directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--run", required=True, help="run directory to create")
    p.add_argument("--scheme", choices=SCHEMES, default="tat")
    p.add_argument("--progress", action="store_true", help="show a progress bar")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[verbosity], help="mean Euclidean error of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="val")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--dump-predictions", metavar="CSV", help="write per-sample predictions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("msd", parents=[verbosity], help="per-sequence spread and MSD of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--noise-std", type=float, help="re-render sequences with this pixel noise (jitter 0 unless given)")
    p.add_argument("--jitter-px", type=int, help="re-render sequences with this maximum shift")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dump", metavar="CSV", help="write per-frame predictions")
    p.set_defaults(func=cmd_msd)

    p = sub.add_parser("attack", parents=[verbosity], help="dump PGD adversarial examples and perturbation statistics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--limit", type=int, default=256)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("prune-report", parents=[verbosity], help="filter scores and the selected prune set of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metric", choices=("cosine", "repr"))
    p.add_argument("--p", type=float, help="global prune ratio (fraction)")
    p.add_argument("--p-max", type=float, help="per-layer cap (fraction)")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", metavar="CSV")
    _add_config_args(p)
    p.set_defaults(func=cmd_prune_report)
    return parser


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command != "train":
        runs.configure_logging(args.verbose)
    try:
        return args.func(args)
    except GazeTatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
