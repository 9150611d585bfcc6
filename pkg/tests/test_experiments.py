"""End-to-end comparisons of the training schemes on synthetic data, each repeated over seeds.

Every assertion is on medians across seeds. Tens of minutes of CPU in total;
run with ``pytest -m slow``.
"""
import numpy as np
import pytest

from data.analytics import reborn_points
from gazetat.config import RunConfig
from gazetat.robustness import msd
from gazetat.synth import GazeDataset, generate
from gazetat.training import TrainResult, run_dwo, run_plain, run_tat

pytestmark = pytest.mark.slow

NETWORK = {
    "patch_size": "32",
    "bins_x": "24",
    "bins_y": "32",
    "conv_kernels": "3,3,3",
    "conv_strides": "2,2,2",
    "batch_size": "32",
    "lr": "0.02",
    "train_eval_samples": "500",
    "precision": "float64",
}

# oversized network, about 5k train and 1k val samples, K=3 and L=5
REBORN = {
    **NETWORK,
    "n_subjects": "32",
    "samples_per_subject": "210",
    "val_subjects": "5",
    "test_subjects": "3",
    "sequence_points": "2",
    "frames_per_sequence": "4",
    "branch_feature_dim": "64",
    "fusion_dim": "64",
    "conv_channels": "16,32,64",
    "mini_generations": "3",
    "epochs_per_generation": "5",
    "warmup_epochs": "0",
}

# few training subjects for a large network, so plain training over-fits
OVERFIT = {
    **NETWORK,
    "n_subjects": "12",
    "samples_per_subject": "100",
    "val_subjects": "2",
    "test_subjects": "2",
    "sequence_points": "2",
    "frames_per_sequence": "4",
    "branch_feature_dim": "64",
    "fusion_dim": "64",
    "conv_channels": "16,32,64",
    "mini_generations": "4",
    "epochs_per_generation": "4",
    "warmup_epochs": "1",
}

# sensor noise high enough that a plain model jitters by at least 0.1 cm on a fixation
JITTER = {
    **NETWORK,
    "n_subjects": "16",
    "samples_per_subject": "150",
    "val_subjects": "2",
    "test_subjects": "2",
    "noise_std": "8.0",
    "sequence_points": "6",
    "frames_per_sequence": "24",
    "branch_feature_dim": "32",
    "fusion_dim": "32",
    "conv_channels": "8,16,16",
    "mini_generations": "3",
    "epochs_per_generation": "3",
    "warmup_epochs": "1",
}


def _setup(settings, tmp_path_factory, name):
    config = RunConfig.build(settings)
    dataset = GazeDataset(generate(config.synth(), tmp_path_factory.mktemp(name) / "data"))
    return config, dataset


def _seeded(config, seed):
    return config.with_overrides([f"seed={seed}"])


def _test_error(result: TrainResult) -> float:
    return float(result.generations["test_err_cm"].iloc[-1])


def _generalization_gap(result: TrainResult) -> float:
    last = result.history.iloc[-1]
    return float(last["val_err_cm"] - last["train_err_cm"])


def test_error_rises_at_each_surgery_and_recovers(tmp_path_factory):
    config, dataset = _setup(REBORN, tmp_path_factory, "reborn")
    per_seed = [reborn_points(run_tat(_seeded(config, seed).tat(), dataset).history) for seed in range(3)]
    assert all(len(points) == 2 for points in per_seed)

    def median(column):
        return np.median(np.stack([points[column].to_numpy() for points in per_seed]), axis=0)

    before, after, recovered = median("val_before"), median("val_after"), median("val_recovered")
    assert np.all(after >= before), (before, after)
    assert np.all(recovered <= after), (after, recovered)
    assert np.all(recovered < before), (before, recovered)


def test_random_teachers_beat_plain_training_and_the_best_teacher(tmp_path_factory):
    config, dataset = _setup(OVERFIT, tmp_path_factory, "overfit")
    runs = {"tat": [], "best": [], "plain": []}
    for seed in range(5):
        seeded = _seeded(config, seed)
        runs["tat"].append(run_tat(seeded.tat(), dataset))
        runs["best"].append(run_tat(seeded.with_overrides(["teacher_strategy=best"]).tat(), dataset))
        runs["plain"].append(run_plain(seeded.tat(), dataset))
    error = {name: np.median([_test_error(r) for r in results]) for name, results in runs.items()}
    gap = {name: np.median([_generalization_gap(r) for r in results]) for name, results in runs.items()}

    assert runs["tat"][0].history["epoch"].iloc[-1] == runs["plain"][0].history["epoch"].iloc[-1]
    assert error["tat"] <= error["plain"], error
    assert error["tat"] <= error["best"], error
    assert gap["tat"] < gap["plain"], gap


@pytest.fixture(scope="module")
def jitter_runs(tmp_path_factory):
    """Per seed: the plain model and DwO models at 90, 50 and 0 % original samples."""
    config, dataset = _setup(JITTER, tmp_path_factory, "jitter")
    sequences = dataset.sequences()
    rows = []
    for seed in range(3):
        seeded = _seeded(config, seed)
        plain = run_plain(seeded.tat(), dataset)
        row = {"plain": (msd(plain.model, sequences), _test_error(plain))}
        for org in (90, 50, 0):
            dwo = run_dwo(seeded.tat(), dataset, seeded.with_overrides([f"org_percent={org}"]).pgd())
            row[org] = (msd(dwo.model, sequences), _test_error(dwo))
        rows.append(row)
    return {key: tuple(np.median([row[key][i] for row in rows]) for i in range(2)) for key in rows[0]}


def test_adversarial_training_reduces_jitter_at_small_error_cost(jitter_runs):
    plain_msd, plain_error = jitter_runs["plain"]
    dwo_msd, dwo_error = jitter_runs[90]
    assert plain_msd >= 0.1, f"plain MSD {plain_msd:.4f} cm is too small to compare"
    assert dwo_msd <= 0.85 * plain_msd, (plain_msd, dwo_msd)
    assert dwo_error <= 1.10 * plain_error, (plain_error, dwo_error)


def test_fewer_original_samples_trade_error_for_stability(jitter_runs):
    msds = [jitter_runs[org][0] for org in (90, 50, 0)]
    errors = [jitter_runs[org][1] for org in (90, 50, 0)]
    assert msds[0] > msds[1] > msds[2], msds
    assert errors[0] < errors[1] < errors[2], errors
