"""Adam training with a held-out validation split and early stopping."""

from __future__ import annotations

import copy
import logging
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch.utils.data import DataLoader

from .const import (
    ADAM_BETAS,
    ADAM_EPS,
    BEST_CHECKPOINT,
    CHECKPOINT_FMT,
    LAST_CHECKPOINT,
    REPORT_FILE,
    SIDECAR_SUFFIX,
)
from .data import ClipDataset, check_pixel_range, frame_shape, training_windows
from .exceptions import (
    CheckpointMismatchException,
    ConfigException,
    DatasetIOException,
    TrainingDivergedException,
)
from .losses import sequence_loss
from .model import (
    EpochRecord,
    LossConfig,
    ModelConfig,
    TrainConfig,
    TrainReport,
    VideoRecord,
)
from .network import BidirectionalPredictor, build_model, predict
from .utils import build_config, config_differences, format_config, parse_config_text

_LOGGER = logging.getLogger(__name__)

StateDict = dict[str, Any]


@dataclass
class DataSplits:
    """Training and validation videos."""

    train: list[VideoRecord]
    validation: list[VideoRecord]


@dataclass
class TrainResult:
    """Best parameters of a run and its report."""

    best_state: StateDict
    report: TrainReport
    best_checkpoint: Path | None = None
    checkpoints: list[Path] = field(default_factory=list)


def split_train_val(
    records: Sequence[VideoRecord], ratio: float, seed: int
) -> DataSplits:
    """Hold out ceil(ratio * N) videos, chosen by seed, for validation."""
    if len(records) < 2:
        raise ConfigException(
            f"need at least 2 training videos for a validation split, got {len(records)}"
        )
    if not 0 < ratio < 1:
        raise ConfigException(f"val_ratio must lie in (0, 1), got {ratio}")
    held_out = min(max(1, math.ceil(ratio * len(records))), len(records) - 1)
    order = np.random.default_rng(seed).permutation(len(records))
    chosen = set(order[:held_out].tolist())
    return DataSplits(
        train=[record for pos, record in enumerate(records) if pos not in chosen],
        validation=[record for pos, record in enumerate(records) if pos in chosen],
    )


def clip_batch_loss(
    model: BidirectionalPredictor, batch: torch.Tensor, loss_cfg: LossConfig
) -> torch.Tensor:
    """Predict from the first T frames of B x (T+n) clips and score against the targets."""
    config = model.config
    steps, offset = config.input_length, config.prediction_offset
    if batch.shape[1] != steps + offset:
        raise ConfigException(
            f"training clips have {batch.shape[1]} frames, expected T + n = {steps + offset}"
        )
    predictions = predict(model, batch[:, :steps])
    targets = batch[:, offset : offset + steps].to(predictions.fused)
    return sequence_loss(predictions, targets, loss_cfg)


def _loader(
    records: Sequence[VideoRecord],
    config: ModelConfig,
    train_cfg: TrainConfig,
    shuffle_seed: int | None,
) -> DataLoader[torch.Tensor]:
    windows = training_windows(
        records, config.clip_length, train_cfg.clip_stride, shuffle_seed
    )
    return DataLoader(
        ClipDataset(windows, config.clip_length, config.frame_size),
        batch_size=train_cfg.batch_size,
        shuffle=False,
        num_workers=train_cfg.num_workers,
    )


def evaluate_loss(
    model: BidirectionalPredictor,
    records: Sequence[VideoRecord],
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
) -> float:
    """Return the mean loss over every window of the records, in inference mode."""
    loader = _loader(records, model.config, train_cfg, None)
    total, count = 0.0, 0
    model.eval()
    with torch.no_grad():
        for batch in loader:
            check_pixel_range(batch, "validation")
            total += clip_batch_loss(model, batch, loss_cfg).item() * len(batch)
            count += len(batch)
    if count == 0:
        raise ConfigException("validation split has no clip of T + n frames")
    return total / count


def _train_epoch(
    model: BidirectionalPredictor,
    optimizer: torch.optim.Optimizer,
    records: Sequence[VideoRecord],
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    epoch: int,
) -> float:
    loader = _loader(records, model.config, train_cfg, train_cfg.seed + epoch)
    total, count = 0.0, 0
    model.train()
    for batch_index, batch in enumerate(loader):
        check_pixel_range(batch, f"epoch {epoch}, batch {batch_index}")
        loss = clip_batch_loss(model, batch, loss_cfg)
        if not torch.isfinite(loss):
            raise TrainingDivergedException(
                f"loss became {loss.item()} at epoch {epoch}, batch {batch_index}"
            )
        optimizer.zero_grad()
        loss.backward()
        if train_cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
        optimizer.step()
        total += loss.item() * len(batch)
        count += len(batch)
        _LOGGER.debug("Epoch %s batch %s loss %.6f", epoch, batch_index, loss.item())
    if count == 0:
        raise ConfigException(
            f"no training clip of T + n frames in {len(records)} videos"
        )
    return total / count


def sidecar_path(path: Path) -> Path:
    """Return the config snapshot path of a checkpoint."""
    return path.with_name(path.name + SIDECAR_SUFFIX)


def save_checkpoint(
    path: Path,
    model: BidirectionalPredictor,
    *,
    optimizer: torch.optim.Optimizer | None = None,
    epoch: int = 0,
    report: TrainReport | None = None,
    native_frame_size: tuple[int, int] | None = None,
) -> Path:
    """Write parameters (BatchNorm statistics included) and the config sidecar.

    `native_frame_size` records the H, W of the training frames before resizing.
    """
    payload = {
        "model": model.state_dict(),
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "epoch": epoch,
        "report": None if report is None else report.to_dict(),
        "native_frame_size": None if native_frame_size is None else list(native_frame_size),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
        sidecar_path(path).write_text(format_config(model=model.config), encoding="utf-8")
    except OSError as err:
        raise DatasetIOException(f"cannot write checkpoint {path}: {err}") from err
    return path


def read_checkpoint_config(path: Path) -> ModelConfig:
    """Return the ModelConfig recorded next to a checkpoint."""
    sidecar = sidecar_path(path)
    try:
        text = sidecar.read_text(encoding="utf-8")
    except OSError as err:
        raise DatasetIOException(f"cannot read checkpoint config {sidecar}: {err}") from err
    sections = parse_config_text(text, source=str(sidecar))
    return build_config(ModelConfig, sections.get("model", {}), "model")


def load_checkpoint(
    path: Path, expected: ModelConfig | None = None
) -> tuple[BidirectionalPredictor, dict[str, Any]]:
    """Build a model from a checkpoint; the config must match `expected` when given."""
    config = read_checkpoint_config(path)
    if expected is not None and expected != config:
        raise CheckpointMismatchException(
            f"checkpoint {path} was written for a different model: "
            + "; ".join(config_differences(expected, config))
        )
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError) as err:
        raise DatasetIOException(f"cannot read checkpoint {path}: {err}") from err
    model = build_model(config)
    model.load_state_dict(payload["model"])
    return model, payload


def write_report(report: TrainReport, path: Path) -> None:
    """Write `epoch,train_loss,val_loss` rows."""
    rows = ["epoch,train_loss,val_loss"]
    rows += [
        f"{record.epoch},{record.train_loss:.10g},{record.val_loss:.10g}"
        for record in report.epochs
    ]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def train(
    model: BidirectionalPredictor,
    splits: DataSplits,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    *,
    out_dir: Path | None = None,
    resume: bool = False,
) -> TrainResult:
    """Fit the model and leave it holding the parameters of the best epoch.

    With `out_dir` a checkpoint is written at every improvement, `best.ckpt`
    aliases the latest one and `last.ckpt` holds the state to resume from.
    """
    if not splits.train:
        raise ConfigException("training split is empty")
    if not splits.validation:
        raise ConfigException("validation split is empty")
    torch.manual_seed(train_cfg.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=train_cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    report = TrainReport()
    best_state: StateDict = copy.deepcopy(model.state_dict())
    best_path: Path | None = None
    written: list[Path] = []
    start_epoch = 1
    native_size = frame_shape(splits.train[0])[:2] if out_dir is not None else None

    if resume:
        if out_dir is None or not (out_dir / LAST_CHECKPOINT).exists():
            raise ConfigException("nothing to resume: no last checkpoint in the output directory")
        restored, payload = load_checkpoint(out_dir / LAST_CHECKPOINT, model.config)
        model.load_state_dict(restored.state_dict())
        if payload["optimizer"] is not None:
            optimizer.load_state_dict(payload["optimizer"])
        if payload["report"] is not None:
            report = TrainReport.from_dict(payload["report"])
        start_epoch = int(payload["epoch"]) + 1
        if (out_dir / BEST_CHECKPOINT).exists():
            best_model, _ = load_checkpoint(out_dir / BEST_CHECKPOINT, model.config)
            best_state = copy.deepcopy(best_model.state_dict())
            best_path = out_dir / BEST_CHECKPOINT
        _LOGGER.info("Resuming at epoch %s", start_epoch)

    stale = report.epochs[-1].epoch - report.best_epoch if report.epochs else 0
    epoch_seconds = 0.0
    for epoch in range(start_epoch, train_cfg.max_epochs + 1):
        if stale >= train_cfg.patience:
            report.stopped_early = True
            break
        if (
            train_cfg.max_seconds is not None
            and report.wall_clock_seconds + epoch_seconds > train_cfg.max_seconds
        ):
            report.stopped_early = True
            _LOGGER.info(
                "Another epoch would exceed the %.0fs budget after %.0fs; stopping",
                train_cfg.max_seconds,
                report.wall_clock_seconds,
            )
            break
        started = time.monotonic()
        train_loss = _train_epoch(model, optimizer, splits.train, loss_cfg, train_cfg, epoch)
        val_loss = evaluate_loss(model, splits.validation, loss_cfg, train_cfg)
        report.epochs.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        improved = val_loss < report.best_val_loss
        if improved:
            report.best_epoch, report.best_val_loss = epoch, val_loss
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
        epoch_seconds = time.monotonic() - started
        report.wall_clock_seconds += epoch_seconds
        _LOGGER.info(
            "Epoch %s: train loss %.6f, validation loss %.6f%s",
            epoch,
            train_loss,
            val_loss,
            " (best)" if improved else "",
        )
        if out_dir is not None:
            if improved:
                written.append(
                    save_checkpoint(
                        out_dir / CHECKPOINT_FMT.format(epoch),
                        model,
                        epoch=epoch,
                        native_frame_size=native_size,
                    )
                )
                best_path = save_checkpoint(
                    out_dir / BEST_CHECKPOINT, model, epoch=epoch, native_frame_size=native_size
                )
            save_checkpoint(
                out_dir / LAST_CHECKPOINT,
                model,
                optimizer=optimizer,
                epoch=epoch,
                report=report,
                native_frame_size=native_size,
            )
            write_report(report, out_dir / REPORT_FILE)
        if stale >= train_cfg.patience:
            report.stopped_early = True
            _LOGGER.info("No improvement for %s epochs; stopping", stale)
            break

    model.load_state_dict(best_state)
    if out_dir is not None:
        write_report(report, out_dir / REPORT_FILE)
        written += [
            path
            for path in (out_dir / REPORT_FILE, out_dir / LAST_CHECKPOINT)
            if path.exists()
        ]
        if best_path is not None:
            written.append(best_path)
    return TrainResult(
        best_state=best_state, report=report, best_checkpoint=best_path, checkpoints=written
    )
