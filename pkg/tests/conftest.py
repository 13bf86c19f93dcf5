"""Test helpers for vadlstm."""

from pathlib import Path

import pytest
from syrupy import SnapshotAssertion

from vadlstm.data import generate_synthetic
from vadlstm.model import LossConfig, ModelConfig, SynthConfig, TrainConfig
from vadlstm.network import BidirectionalPredictor, build_model

from .syrupy import VadSnapshotExtension


@pytest.fixture(name="snapshot")
def snapshot_assertion(snapshot: SnapshotAssertion) -> SnapshotAssertion:
    """Return snapshot assertion fixture with the vadlstm extension."""
    return snapshot.use_extension(VadSnapshotExtension)


@pytest.fixture(name="tiny_config")
def mock_tiny_config() -> ModelConfig:
    """Return a two-stage model over 16x16 frames, T=3, n=2."""
    return ModelConfig(
        input_length=3,
        prediction_offset=2,
        frame_size=(16, 16),
        stage_channels=(4, 8),
        convlstm_kernel=3,
        test_prediction_index=2,
        seed=1,
    )


@pytest.fixture(name="tiny_model")
def mock_tiny_model(tiny_config: ModelConfig) -> BidirectionalPredictor:
    """Return the full model built from tiny_config."""
    return build_model(tiny_config)


@pytest.fixture(name="loss_config")
def mock_loss_config() -> LossConfig:
    """Return the default loss configuration."""
    return LossConfig()


@pytest.fixture(name="train_config")
def mock_train_config() -> TrainConfig:
    """Return a short training protocol."""
    return TrainConfig(batch_size=2, max_epochs=2, patience=1, clip_stride=6, seed=5)


@pytest.fixture(name="synth_config")
def mock_synth_config() -> SynthConfig:
    """Return a small synthetic benchmark."""
    return SynthConfig(
        frame_size=(16, 16),
        frames_per_video=24,
        num_normal_videos=3,
        num_test_normal_videos=1,
        num_anomalous_videos=2,
        seed=3,
    )


@pytest.fixture(name="dataset_root")
def mock_dataset_root(tmp_path: Path, synth_config: SynthConfig) -> Path:
    """Return a directory holding the small synthetic benchmark."""
    root = tmp_path / "data"
    generate_synthetic(synth_config, root)
    return root
