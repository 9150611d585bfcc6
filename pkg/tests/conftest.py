import numpy as np
import pytest

from gazetat.gazenet import GazeNet, GazeNetConfig, LayerSpec
from gazetat.ordinal import GazeCodec
from gazetat.synth import GazeDataset, SynthConfig, generate
from gazetat.tensor import set_default_dtype

TINY_STACK = (LayerSpec(channels=4, kernel=3, stride=2), LayerSpec(channels=8, kernel=3, stride=2))

TINY_SETTINGS = {
    "n_subjects": "5",
    "samples_per_subject": "12",
    "val_subjects": "1",
    "test_subjects": "1",
    "patch_size": "16",
    "sequence_points": "2",
    "frames_per_sequence": "4",
    "bins_x": "6",
    "bins_y": "8",
    "branch_feature_dim": "8",
    "fusion_dim": "8",
    "conv_channels": "4,8",
    "conv_kernels": "3,3",
    "conv_strides": "2,2",
    "mini_generations": "2",
    "epochs_per_generation": "1",
    "warmup_epochs": "0",
    "batch_size": "12",
    "train_eval_samples": "20",
    "eval_batch_size": "16",
    "precision": "float64",
}


@pytest.fixture(autouse=True)
def double_precision():
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def tiny_net_config():
    return GazeNetConfig(
        patch_size=16, branch_feature_dim=8, fusion_in=24, fusion_out=8, bins_x=6, bins_y=8, conv_stack=TINY_STACK,
    )


@pytest.fixture
def tiny_codec():
    return GazeCodec.for_screen(10.0, 14.0, 6, 8)


@pytest.fixture
def tiny_model(tiny_net_config, tiny_codec):
    return GazeNet(tiny_net_config, tiny_codec, np.random.default_rng(0))


@pytest.fixture
def tiny_inputs():
    rng = np.random.default_rng(1)
    return tuple(rng.uniform(0.0, 1.0, size=(4, 3, 16, 16)) for _ in range(3))


@pytest.fixture(scope="session")
def tiny_synth():
    return SynthConfig(
        n_subjects=5, samples_per_subject=12, val_subjects=1, test_subjects=1, patch_size=16,
        sequence_points=2, frames_per_sequence=4, seed=0,
    )


@pytest.fixture(scope="session")
def tiny_dataset_path(tmp_path_factory, tiny_synth):
    return generate(tiny_synth, tmp_path_factory.mktemp("data") / "tiny")


@pytest.fixture
def tiny_dataset(tiny_dataset_path):
    return GazeDataset(tiny_dataset_path)


@pytest.fixture
def tiny_settings():
    return dict(TINY_SETTINGS)


@pytest.fixture
def tiny_config_file(tmp_path, tiny_settings):
    path = tmp_path / "tiny.conf"
    path.write_text("".join(f"{key} = {value}\n" for key, value in tiny_settings.items()))
    return path
