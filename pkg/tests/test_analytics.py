import numpy as np
import pandas as pd
import pytest

from data import analytics
from data.data_layer import (
    METRICS_COLUMNS,
    OVERRIDE_FILE,
    _safe_load,
    list_runs,
    load_run,
    save_config_override,
    validate_config_text,
)
from gazetat import runs
from gazetat.errors import ConfigError


@pytest.fixture
def metrics():
    return pd.DataFrame({
        "epoch": [1, 2, 3, 4, 5, 6],
        "mini_generation": [1, 1, 2, 2, 3, 3],
        "lr": [0.01, 0.001] * 3,
        "train_loss": [3.0, 2.5, 2.8, 2.2, 2.6, 2.0],
        "train_err_cm": [2.0, 1.5, 1.8, 1.2, 1.6, 1.0],
        "val_err_cm": [2.5, 2.0, 2.6, 1.9, 2.4, 2.1],
        "reborn": [False, False, True, False, True, False],
    })


def test_basic_counters(metrics):
    counters = analytics.basic_counters(metrics)
    assert counters["epochs"] == 6
    assert counters["final_val"] == 2.1
    assert counters["best_val"] == 1.9 and counters["best_epoch"] == 4
    assert counters["gap"] == pytest.approx(1.1)
    empty = analytics.basic_counters(pd.DataFrame(columns=METRICS_COLUMNS))
    assert empty["epochs"] == 0 and np.isnan(empty["final_val"])


def test_reborn_points(metrics):
    points = analytics.reborn_points(metrics)
    assert points["epoch"].tolist() == [3, 5]
    assert points["val_before"].tolist() == [2.0, 1.9]
    assert points["val_after"].tolist() == [2.6, 2.4]
    assert points["val_recovered"].tolist() == [1.9, 2.1]
    assert points["recovered"].tolist() == [True, False]
    assert analytics.reborn_points(metrics.assign(reborn=False)).empty


def test_generation_table_counts_reinitialized_filters():
    generations = pd.DataFrame({"mini_generation": [1, 2, 3], "val_err_cm": [2.0, 1.9, 2.1]})
    surgeries = pd.DataFrame({"mini_generation": [1, 1, 2], "n_pruned": [3, 4, 2]})
    table = analytics.generation_table(generations, surgeries)
    assert table["filters_reinit"].tolist() == [7, 2, 0]
    assert analytics.generation_table(generations, pd.DataFrame())["filters_reinit"].tolist() == [0, 0, 0]


def test_msd_summary_and_prune_share():
    summary = analytics.msd_summary(pd.DataFrame({"sigma": [0.1, 0.3]}))
    assert summary == {"sequences": 2, "msd": pytest.approx(0.2), "worst_sigma": 0.3}
    assert analytics.msd_summary(pd.DataFrame(columns=["sigma"]))["sequences"] == 0

    prune = pd.DataFrame({
        "mini_generation": [1, 1, 1, 1],
        "layer": ["a", "a", "b", "b"],
        "filter": [0, 1, 0, 1],
        "score": [0.5, 0.1, 0.2, 0.3],
        "selected": [True, False, False, False],
    })
    share = analytics.layer_prune_share(prune)
    assert share["share"].tolist() == [0.5, 0.0]


def test_safe_load_fills_missing_columns(tmp_path):
    path = tmp_path / "metrics.csv"
    pd.DataFrame({"epoch": [1], "val_err_cm": [2.0]}).to_csv(path, index=False)
    frame = _safe_load(path, METRICS_COLUMNS)
    assert set(METRICS_COLUMNS) <= set(frame.columns)
    assert frame["reborn"].tolist() == [False]
    assert np.isnan(frame.loc[0, "lr"])
    assert _safe_load(tmp_path / "absent.csv", METRICS_COLUMNS).empty


def test_list_and_load_runs(tmp_path):
    run = tmp_path / "runs" / "a"
    run.mkdir(parents=True)
    runs.write_manifest(run, scheme="tat", seed=1)
    (tmp_path / "runs" / "not_a_run").mkdir()
    assert list_runs(str(tmp_path / "runs")) == [str(run)]
    assert list_runs(str(tmp_path / "nowhere")) == []

    loaded = load_run(str(run))
    assert loaded["manifest"] == {"scheme": "tat", "seed": 1}
    assert loaded["metrics_df"].empty
    assert "mini_generations = 5" in loaded["config_text"]


def test_config_override_is_validated(tmp_path):
    config, error = validate_config_text("seed = 3\nbatch_size = 64")
    assert error is None and config.batch_size == 64
    config, error = validate_config_text("batch = 64")
    assert config is None and "unknown config key" in error
    config, error = validate_config_text("lambda_hard = 0\nlambda_mix = 0")
    assert config is None and "lambda_hard" in error

    path = save_config_override(str(tmp_path), "seed = 3")
    assert path.name == OVERRIDE_FILE
    assert "seed = 3" in path.read_text()
    with pytest.raises(ConfigError):
        save_config_override(str(tmp_path), "seed = three")
