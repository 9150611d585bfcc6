import json
from datetime import datetime
from pathlib import Path
from typing import List

import pandas as pd
import streamlit as st

from gazetat import runs
from gazetat.config import RunConfig
from gazetat.errors import ConfigError

METRICS_COLUMNS = ["epoch", "mini_generation", "lr", "train_loss", "train_err_cm", "val_err_cm", "reborn"]
GENERATIONS_COLUMNS = ["mini_generation", "val_err_cm", "test_err_cm", "pool_size", "admitted"]
SURGERY_COLUMNS = [
    "mini_generation", "layer", "n_filters", "n_pruned",
    "raw_min", "raw_max", "adj_min", "adj_max", "new_min", "new_max", "scalar",
]
PRUNE_COLUMNS = ["mini_generation", "layer", "filter", "score", "selected"]
MSD_COLUMNS = ["sequence_id", "frames", "mean_x", "mean_y", "sigma"]
MSD_PRED_COLUMNS = ["sequence_id", "frame", "gt_x", "gt_y", "pred_x", "pred_y"]
PRED_COLUMNS = ["record", "subject", "gt_x", "gt_y", "pred_x", "pred_y", "error_cm"]

OVERRIDE_FILE = "override.txt"
TABLES = {
    "metrics_df": (runs.METRICS_FILE, METRICS_COLUMNS),
    "generations_df": (runs.GENERATIONS_FILE, GENERATIONS_COLUMNS),
    "surgery_df": (runs.SURGERY_FILE, SURGERY_COLUMNS),
    "prune_df": (runs.PRUNE_SCORES_FILE, PRUNE_COLUMNS),
    "msd_df": ("msd_sequences.csv", MSD_COLUMNS),
    "msd_pred_df": ("msd_predictions.csv", MSD_PRED_COLUMNS),
    "pred_df": ("predictions.csv", PRED_COLUMNS),
}


def _safe_load(path: Path, columns: List[str]) -> pd.DataFrame:
    """Read a run table; a missing file gives an empty frame and missing columns are added."""
    try:
        df = pd.read_csv(path)
    except (FileNotFoundError, pd.errors.EmptyDataError):
        return pd.DataFrame(columns=columns)
    for col in columns:
        if col not in df.columns:
            df[col] = False if col in ("reborn", "selected", "admitted") else float("nan")
    return df


def list_runs(root: str) -> List[str]:
    """Run directories under ``root`` (anything holding a manifest), newest first."""
    base = Path(root).expanduser()
    if not base.is_dir():
        return []
    found = [p.parent for p in base.glob(f"**/{runs.MANIFEST_FILE}")]
    return [str(p) for p in sorted(found, key=lambda p: p.stat().st_mtime, reverse=True)]


def load_run(run_dir: str) -> dict:
    base = Path(run_dir)
    loaded = {key: _safe_load(base / name, cols) for key, (name, cols) in TABLES.items()}
    manifest = base / runs.MANIFEST_FILE
    loaded["manifest"] = json.loads(manifest.read_text()) if manifest.exists() else {}
    config = base / runs.CONFIG_FILE
    loaded["config_text"] = config.read_text() if config.exists() else RunConfig().to_text()
    return loaded


def init_run_data(run_dir: str):
    if st.session_state.get("run_dir") == run_dir:
        return
    try:
        st.session_state.update(load_run(run_dir))
    except (OSError, json.JSONDecodeError) as e:
        st.error(f"Could not load run {run_dir}: {e}")
        st.stop()
    st.session_state.run_dir = run_dir
    st.session_state.last_load = datetime.now().strftime("%H:%M")


def reload_run():
    run_dir = st.session_state.get("run_dir")
    st.session_state.run_dir = None
    if run_dir:
        init_run_data(run_dir)
    st.rerun()


def save_config_override(run_dir: str, text: str) -> Path:
    """Validate ``text`` as a run config and write it next to the run for ``--config`` reuse."""
    config = RunConfig.from_text(text)
    path = Path(run_dir) / OVERRIDE_FILE
    path.write_text(config.to_text())
    return path


def validate_config_text(text: str):
    """Returns (config, None) or (None, error message); the sub-configs must build too."""
    try:
        config = RunConfig.from_text(text)
        config.synth(), config.tat(), config.pgd()
        return config, None
    except ConfigError as e:
        return None, str(e)
