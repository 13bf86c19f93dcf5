"""Tests for the training loop, early stopping and checkpoints."""

import itertools
from collections.abc import Iterator
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace
from typing import Any

import numpy as np
import pytest
import torch

from vadlstm import data, trainer
from vadlstm.const import BEST_CHECKPOINT, LAST_CHECKPOINT, REPORT_FILE, Split
from vadlstm.data import load_dataset
from vadlstm.exceptions import (
    CheckpointMismatchException,
    ConfigException,
    DatasetValidationException,
    TrainingDivergedException,
)
from vadlstm.model import LossConfig, ModelConfig, TrainConfig, VideoRecord
from vadlstm.network import BidirectionalPredictor, build_model
from vadlstm.trainer import (
    DataSplits,
    clip_batch_loss,
    evaluate_loss,
    load_checkpoint,
    read_checkpoint_config,
    save_checkpoint,
    sidecar_path,
    split_train_val,
    train,
)

from . import random_clip


def _records(count: int) -> list[VideoRecord]:
    return [
        VideoRecord(video_id=f"v{index}", frame_count=30, path=Path(f"v{index}"))
        for index in range(count)
    ]


def _scripted_losses(monkeypatch: pytest.MonkeyPatch, val_losses: list[float]) -> None:
    """Replace the epoch and validation passes with scripted losses."""
    losses: Iterator[float] = iter(val_losses)

    def fake_epoch(*args: Any, **kwargs: Any) -> float:
        return 0.5

    def fake_validation(*args: Any, **kwargs: Any) -> float:
        return next(losses)

    monkeypatch.setattr(trainer, "_train_epoch", fake_epoch)
    monkeypatch.setattr(trainer, "evaluate_loss", fake_validation)


@pytest.fixture(name="splits")
def mock_splits(dataset_root: Path) -> DataSplits:
    """Return two training videos and one validation video."""
    records = load_dataset(dataset_root, Split.TRAIN)
    return split_train_val(records, 0.1, seed=0)


def test_split_sizes() -> None:
    """Test that ceil(ratio * N) videos are held out."""
    splits = split_train_val(_records(10), 0.1, seed=4)
    assert len(splits.validation) == 1
    assert len(splits.train) == 9
    assert {record.video_id for record in splits.train + splits.validation} == {
        f"v{index}" for index in range(10)
    }
    assert len(split_train_val(_records(10), 0.25, seed=4).validation) == 3


def test_split_is_deterministic() -> None:
    """Test that one seed picks one split."""
    first = split_train_val(_records(12), 0.5, seed=9)
    second = split_train_val(_records(12), 0.5, seed=9)
    assert first == second


def test_split_keeps_one_training_video() -> None:
    """Test the split of two videos and the lower bound."""
    splits = split_train_val(_records(2), 0.9, seed=0)
    assert len(splits.train) == 1
    assert len(splits.validation) == 1
    with pytest.raises(ConfigException, match="at least 2"):
        split_train_val(_records(1), 0.1, seed=0)


def test_clip_batch_loss_checks_length(
    tiny_model: BidirectionalPredictor, tiny_config: ModelConfig, loss_config: LossConfig
) -> None:
    """Test that training clips must hold T + n frames."""
    loss = clip_batch_loss(tiny_model, random_clip(tiny_config, batch=2, length=5), loss_config)
    assert loss.ndim == 0
    assert torch.isfinite(loss)
    with pytest.raises(ConfigException, match="T \\+ n = 5"):
        clip_batch_loss(tiny_model, random_clip(tiny_config, length=4), loss_config)


def test_train_writes_checkpoints(
    tmp_path: Path,
    splits: DataSplits,
    tiny_model: BidirectionalPredictor,
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> None:
    """Test a short real run and its artifacts."""
    out_dir = tmp_path / "run"
    result = train(
        tiny_model, splits, loss_config, replace(train_config, max_epochs=1), out_dir=out_dir
    )
    assert [record.epoch for record in result.report.epochs] == [1]
    assert result.report.best_epoch == 1
    assert result.best_checkpoint == out_dir / BEST_CHECKPOINT
    for name in ("epoch_001.ckpt", BEST_CHECKPOINT, LAST_CHECKPOINT, REPORT_FILE):
        assert (out_dir / name).exists(), name
    assert (out_dir / REPORT_FILE).read_text(encoding="utf-8").startswith(
        "epoch,train_loss,val_loss\n1,"
    )
    for name, value in tiny_model.state_dict().items():
        assert torch.equal(value, result.best_state[name]), name


def test_early_stopping(
    monkeypatch: pytest.MonkeyPatch,
    splits: DataSplits,
    tiny_model: BidirectionalPredictor,
    loss_config: LossConfig,
) -> None:
    """Test that training stops after `patience` epochs without improvement."""
    _scripted_losses(monkeypatch, [1.0, 0.8, 0.9, 0.85, 0.1])
    result = train(
        tiny_model, splits, loss_config, TrainConfig(max_epochs=10, patience=2)
    )
    assert [record.val_loss for record in result.report.epochs] == [1.0, 0.8, 0.9, 0.85]
    assert result.report.best_epoch == 2
    assert result.report.best_val_loss == 0.8
    assert result.report.stopped_early
    assert result.best_checkpoint is None


def test_time_budget_stops_before_overrunning(
    monkeypatch: pytest.MonkeyPatch,
    splits: DataSplits,
    tiny_model: BidirectionalPredictor,
    loss_config: LossConfig,
) -> None:
    """Test that no epoch starts once the last epoch's duration would overrun the budget."""
    _scripted_losses(monkeypatch, [1.0, 0.8, 0.6, 0.4])
    monkeypatch.setattr(
        trainer, "time", SimpleNamespace(monotonic=itertools.count(0, 100).__next__)
    )
    result = train(
        tiny_model,
        splits,
        loss_config,
        TrainConfig(max_epochs=10, patience=5, max_seconds=250),
    )
    assert [record.epoch for record in result.report.epochs] == [1, 2]
    assert result.report.wall_clock_seconds == 200
    assert result.report.stopped_early


def test_time_budget_must_be_positive() -> None:
    """Test the budget validation."""
    with pytest.raises(ConfigException, match="max_seconds"):
        TrainConfig(max_seconds=0)


def test_divergence_names_epoch_and_batch(
    monkeypatch: pytest.MonkeyPatch,
    splits: DataSplits,
    tiny_model: BidirectionalPredictor,
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> None:
    """Test that a NaN loss aborts training."""
    monkeypatch.setattr(
        trainer, "clip_batch_loss", lambda *args: torch.tensor(float("nan"))
    )
    with pytest.raises(TrainingDivergedException, match="epoch 1, batch 0"):
        train(tiny_model, splits, loss_config, train_config)


def test_empty_split_is_config_error(
    tiny_model: BidirectionalPredictor, loss_config: LossConfig, train_config: TrainConfig
) -> None:
    """Test that both splits must hold videos."""
    with pytest.raises(ConfigException, match="validation split is empty"):
        train(tiny_model, DataSplits(_records(2), []), loss_config, train_config)


def test_checkpoint_round_trip(
    tmp_path: Path, tiny_model: BidirectionalPredictor, tiny_config: ModelConfig
) -> None:
    """Test that parameters and config survive a checkpoint."""
    path = save_checkpoint(tmp_path / "model.ckpt", tiny_model, epoch=3)
    assert sidecar_path(path).name == "model.ckpt.cfg"
    assert read_checkpoint_config(path) == tiny_config
    model, payload = load_checkpoint(path, tiny_config)
    assert payload["epoch"] == 3
    assert payload["optimizer"] is None
    for name, value in tiny_model.state_dict().items():
        assert torch.equal(value, model.state_dict()[name]), name


def test_checkpoint_mismatch_lists_differences(
    tmp_path: Path, tiny_model: BidirectionalPredictor, tiny_config: ModelConfig
) -> None:
    """Test that a checkpoint refuses a different architecture."""
    path = save_checkpoint(tmp_path / "model.ckpt", tiny_model)
    with pytest.raises(CheckpointMismatchException, match="att: false != true"):
        load_checkpoint(path, replace(tiny_config, enable_att=False))


def test_resume_continues_the_report(
    monkeypatch: pytest.MonkeyPatch,
    tmp_path: Path,
    splits: DataSplits,
    tiny_config: ModelConfig,
    loss_config: LossConfig,
) -> None:
    """Test that a resumed run picks up after the last finished epoch."""
    out_dir = tmp_path / "run"
    _scripted_losses(monkeypatch, [1.0, 0.7])
    train(
        build_model(tiny_config),
        splits,
        loss_config,
        TrainConfig(max_epochs=2, patience=3),
        out_dir=out_dir,
    )
    _scripted_losses(monkeypatch, [0.6])
    result = train(
        build_model(tiny_config),
        splits,
        loss_config,
        TrainConfig(max_epochs=3, patience=3),
        out_dir=out_dir,
        resume=True,
    )
    assert [record.epoch for record in result.report.epochs] == [1, 2, 3]
    assert result.report.best_epoch == 3
    assert (out_dir / "epoch_003.ckpt").exists()
    rows = (out_dir / REPORT_FILE).read_text(encoding="utf-8").splitlines()
    assert len(rows) == 4


def test_resume_needs_last_checkpoint(
    tmp_path: Path,
    splits: DataSplits,
    tiny_model: BidirectionalPredictor,
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> None:
    """Test that resuming an empty directory is a config error."""
    with pytest.raises(ConfigException, match="nothing to resume"):
        train(tiny_model, splits, loss_config, train_config, out_dir=tmp_path, resume=True)


def test_out_of_range_pixels_stop_training(
    monkeypatch: pytest.MonkeyPatch,
    splits: DataSplits,
    tiny_model: BidirectionalPredictor,
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> None:
    """Test the per-batch pixel range check."""
    monkeypatch.setattr(
        data,
        "read_frame",
        lambda path, target_size=None: np.full((16, 16, 1), 1.5, dtype=np.float32),
    )
    with pytest.raises(DatasetValidationException, match="epoch 1, batch 0: min 1.5, max 1.5"):
        train(tiny_model, splits, loss_config, train_config)


def test_best_checkpoint_reproduces_validation_loss(
    tmp_path: Path,
    splits: DataSplits,
    tiny_config: ModelConfig,
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> None:
    """Test that the best checkpoint carries BatchNorm statistics."""
    result = train(
        build_model(tiny_config), splits, loss_config, train_config, out_dir=tmp_path / "run"
    )
    assert result.best_checkpoint is not None
    model, payload = load_checkpoint(result.best_checkpoint, tiny_config)
    assert payload["native_frame_size"] == [16, 16]
    assert payload["model"]["forward_ae.encoder.0.downsample.1.running_mean"].abs().sum() > 0
    reloaded = evaluate_loss(model, splits.validation, loss_config, train_config)
    assert reloaded == pytest.approx(result.report.best_val_loss, abs=1e-6)


def test_fixed_seed_gives_identical_report(
    splits: DataSplits,
    tiny_config: ModelConfig,
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> None:
    """Test that two runs with one seed report the same losses."""
    reports = [
        train(build_model(tiny_config), splits, loss_config, train_config).report
        for _ in range(2)
    ]
    first, second = (replace(report, wall_clock_seconds=0.0) for report in reports)
    assert first == second
    assert len(first.epochs) == train_config.max_epochs


@pytest.mark.slow
def test_single_batch_overfits(tiny_config: ModelConfig, loss_config: LossConfig) -> None:
    """Test that 200 Adam steps on one batch of 4 clips shrink the loss below 5%."""
    model = build_model(tiny_config)
    levels = torch.tensor([-0.6, -0.2, 0.3, 0.7]).reshape(4, 1, 1, 1, 1)
    batch = levels.expand(4, tiny_config.clip_length, 1, 16, 16).contiguous()
    optimizer = torch.optim.Adam(model.parameters(), lr=5e-3)
    model.train()
    initial = clip_batch_loss(model, batch, loss_config).item()
    for _ in range(200):
        loss = clip_batch_loss(model, batch, loss_config)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    final = clip_batch_loss(model, batch, loss_config).item()
    assert final < 0.05 * initial
