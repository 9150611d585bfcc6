"""Logging setup and run-directory artifacts (config echo, manifest, metric tables)."""
from __future__ import annotations

import json
import logging
import subprocess
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

from gazetat.checkpoint import save_checkpoint, save_pool
from gazetat.config import RunConfig
from gazetat.training import TrainResult

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

CONFIG_FILE = "config.txt"
MANIFEST_FILE = "manifest.json"
METRICS_FILE = "metrics.csv"
GENERATIONS_FILE = "generations.csv"
SURGERY_FILE = "surgery.csv"
PRUNE_SCORES_FILE = "prune_scores.csv"
MODEL_FILE = "model.ckpt"
TEACHERS_DIR = "teachers"
LOG_FILE = "train.log"


def configure_logging(verbosity: int = 0, log_file: Optional[Union[str, Path]] = None) -> None:
    """Console logging at WARNING / INFO / DEBUG for verbosity 0 / 1 / 2+, plus an optional file at DEBUG."""
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_gazetat", False):
            root.removeHandler(handler)
            handler.close()
    console = logging.StreamHandler()
    console.setLevel(level)
    handlers = [console]
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG if verbosity >= 2 else logging.INFO)
        handlers.append(file_handler)
    for handler in handlers:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._gazetat = True
        root.addHandler(handler)
    root.setLevel(min(h.level for h in handlers))


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5, check=True,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def start_run(run_dir: Union[str, Path], config: RunConfig) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_FILE).write_text(config.to_text())
    return run_dir


def write_manifest(run_dir: Union[str, Path], **fields: Any) -> Path:
    path = Path(run_dir) / MANIFEST_FILE
    existing = json.loads(path.read_text()) if path.exists() else {}
    existing.update(fields)
    path.write_text(json.dumps(existing, indent=2, sort_keys=True, default=str) + "\n")
    return path


def write_training_artifacts(run_dir: Union[str, Path], result: TrainResult, scheme: str, seed: int) -> None:
    run_dir = Path(run_dir)
    result.history.to_csv(run_dir / METRICS_FILE, index=False)
    result.generations.to_csv(run_dir / GENERATIONS_FILE, index=False)
    if not result.surgeries.empty:
        result.surgeries.to_csv(run_dir / SURGERY_FILE, index=False)
    if not result.prune_scores.empty:
        result.prune_scores.to_csv(run_dir / PRUNE_SCORES_FILE, index=False)
    final = result.generations.iloc[-1]
    save_checkpoint(result.model, run_dir / MODEL_FILE, {
        "scheme": scheme,
        "mini_generation": int(final["mini_generation"]),
        "epoch": int(result.history["epoch"].iloc[-1]),
        "seed": seed,
        "val_err_cm": result.final_val_error,
    })
    if len(result.pool):
        save_pool(result.pool, run_dir / TEACHERS_DIR)
    write_manifest(
        run_dir,
        final_val_err_cm=result.final_val_error,
        final_test_err_cm=float(final["test_err_cm"]),
        final_train_err_cm=float(result.history["train_err_cm"].iloc[-1]),
        initial_val_err_cm=result.initial_val_error,
        teachers=len(result.pool),
    )
