"""Models for configurations, dataset records and run artifacts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import torch
from mashumaro import DataClassDictMixin, field_options
from mashumaro.config import BaseConfig
from mashumaro.types import SerializationStrategy

from .const import (
    DEFAULT_FRAME_SIZE,
    DEFAULT_STAGE_CHANNELS,
    DYNAMIC_RANGE,
    BENCHMARK_FRAME_SIZE,
    BENCHMARK_STAGE_CHANNELS,
    AnomalyKind,
    L1Filter,
)
from .exceptions import ConfigException, DatasetValidationException

_LOGGER = logging.getLogger(__name__)


class PathSerializationStrategy(SerializationStrategy):
    """SerializationStrategy for Path objects."""

    def serialize(self, value: Path) -> str:
        """Serialize a path to its POSIX string."""
        return value.as_posix()

    def deserialize(self, value: str) -> Path:
        """Deserialize a string to a path."""
        return Path(value)


class _AliasConfig(BaseConfig):
    """Shared mashumaro config of the typed configurations."""

    serialize_by_alias = True
    forbid_extra_keys = True


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigException(message)


@dataclass(frozen=True)
class ModelConfig(DataClassDictMixin):
    """Architecture and ablation knobs of the bi-directional predictor."""

    input_length: int = field(default=9, metadata=field_options(alias="T"))
    prediction_offset: int = field(default=7, metadata=field_options(alias="n"))
    frame_size: tuple[int, int] = DEFAULT_FRAME_SIZE
    in_channels: int = 1
    stage_channels: tuple[int, ...] = DEFAULT_STAGE_CHANNELS
    conv_kernel: int = 3
    convlstm_kernel: int = 5
    attention_kernel: int = 3
    attention_channels: int | None = None
    leaky_slope: float = 0.2
    enable_bi: bool = field(default=True, metadata=field_options(alias="bi"))
    enable_sho: bool = field(default=True, metadata=field_options(alias="sho"))
    enable_att: bool = field(default=True, metadata=field_options(alias="att"))
    test_prediction_index: int = 5
    seed: int = 0

    class Config(_AliasConfig):
        """BaseConfig for ModelConfig."""

    def __post_init__(self) -> None:
        """Validate the configuration invariants."""
        _require(self.input_length >= 1, f"T must be >= 1, got {self.input_length}")
        _require(
            self.prediction_offset >= 1,
            f"n must be >= 1, got {self.prediction_offset}",
        )
        _require(len(self.stage_channels) >= 1, "at least one stage is required")
        _require(
            all(channels > 0 for channels in self.stage_channels),
            f"stage channels must be positive, got {self.stage_channels}",
        )
        _require(self.in_channels > 0, f"in_channels must be > 0, got {self.in_channels}")
        factor = 2 ** len(self.stage_channels)
        height, width = self.frame_size
        _require(
            height % factor == 0 and width % factor == 0,
            f"frame size {height}x{width} is not divisible by {factor} "
            f"({len(self.stage_channels)} stride-2 stages)",
        )
        for name in ("conv_kernel", "convlstm_kernel", "attention_kernel"):
            size = getattr(self, name)
            _require(size > 0 and size % 2 == 1, f"{name} must be odd, got {size}")
        _require(
            1 <= self.test_prediction_index <= self.input_length,
            f"test_prediction_index must lie in [1, {self.input_length}], "
            f"got {self.test_prediction_index}",
        )
        _require(
            self.attention_channels is None or self.attention_channels > 0,
            f"attention_channels must be positive, got {self.attention_channels}",
        )

    @classmethod
    def benchmark_preset(cls, in_channels: int = 1, **overrides: object) -> ModelConfig:
        """Return the benchmark-scale configuration (192x192, three stages)."""
        values: dict[str, object] = {
            "frame_size": BENCHMARK_FRAME_SIZE,
            "stage_channels": BENCHMARK_STAGE_CHANNELS,
            "in_channels": in_channels,
        }
        values.update(overrides)
        return cls(**values)  # type: ignore[arg-type]

    @property
    def clip_length(self) -> int:
        """Frames needed by one training clip (inputs plus targets)."""
        return self.input_length + self.prediction_offset

    @property
    def history(self) -> int:
        """Offset from a scored frame back to the first frame of its clip."""
        return self.prediction_offset + self.test_prediction_index - 1


@dataclass(frozen=True)
class LossConfig(DataClassDictMixin):
    """Weights and window of the mixed SSIM + Gaussian-l1 objective."""

    lambda_: float = field(default=1.0, metadata=field_options(alias="lambda"))
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    dynamic_range: float = DYNAMIC_RANGE
    c1: float | None = None
    c2: float | None = None
    l1_filter: L1Filter = L1Filter.GAUSSIAN
    direction_weight: float = 0.5

    class Config(_AliasConfig):
        """BaseConfig for LossConfig."""

    def __post_init__(self) -> None:
        """Fill in the stabilizers and validate."""
        if self.c1 is None:
            object.__setattr__(self, "c1", (0.01 * self.dynamic_range) ** 2)
        if self.c2 is None:
            object.__setattr__(self, "c2", (0.03 * self.dynamic_range) ** 2)
        _require(self.lambda_ >= 0, f"lambda must be >= 0, got {self.lambda_}")
        _require(
            self.ssim_window > 0 and self.ssim_window % 2 == 1,
            f"ssim_window must be odd, got {self.ssim_window}",
        )
        _require(self.ssim_sigma > 0, f"ssim_sigma must be > 0, got {self.ssim_sigma}")
        _require(
            self.c1 is not None and self.c1 > 0 and self.c2 is not None and self.c2 > 0,
            "stabilizers c1 and c2 must be > 0",
        )
        _require(
            self.direction_weight >= 0,
            f"direction_weight must be >= 0, got {self.direction_weight}",
        )


@dataclass(frozen=True)
class TrainConfig(DataClassDictMixin):
    """Optimization protocol: Adam, validation split and early stopping."""

    learning_rate: float = field(default=5e-4, metadata=field_options(alias="lr"))
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 5
    val_ratio: float = 0.1
    seed: int = 0
    clip_stride: int = field(default=4, metadata=field_options(alias="stride"))
    grad_clip: float | None = None
    num_workers: int = 0
    max_seconds: float | None = None

    class Config(_AliasConfig):
        """BaseConfig for TrainConfig."""

    def __post_init__(self) -> None:
        """Validate the configuration invariants."""
        _require(0 < self.val_ratio < 1, f"val_ratio must lie in (0, 1), got {self.val_ratio}")
        _require(self.patience >= 1, f"patience must be >= 1, got {self.patience}")
        _require(self.learning_rate > 0, f"lr must be > 0, got {self.learning_rate}")
        _require(self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}")
        _require(self.max_epochs >= 1, f"max_epochs must be >= 1, got {self.max_epochs}")
        _require(self.clip_stride >= 1, f"stride must be >= 1, got {self.clip_stride}")
        _require(self.num_workers >= 0, "num_workers must be >= 0")
        _require(
            self.grad_clip is None or self.grad_clip > 0,
            f"grad_clip must be > 0 when set, got {self.grad_clip}",
        )
        _require(
            self.max_seconds is None or self.max_seconds > 0,
            f"max_seconds must be > 0 when set, got {self.max_seconds}",
        )


@dataclass(frozen=True)
class SynthConfig(DataClassDictMixin):
    """Synthetic moving-square benchmark."""

    frame_size: tuple[int, int] = DEFAULT_FRAME_SIZE
    channels: int = 1
    frames_per_video: int = 120
    num_normal_videos: int = field(default=12, metadata=field_options(alias="videos"))
    num_test_normal_videos: int = field(
        default=2, metadata=field_options(alias="test_videos")
    )
    num_anomalous_videos: int = field(
        default=4, metadata=field_options(alias="anomalous_videos")
    )
    anomaly_kinds: tuple[AnomalyKind, ...] = (
        AnomalyKind.SPEED,
        AnomalyKind.EXTRA_OBJECT,
    )
    speed_range: tuple[float, float] = (0.5, 1.0)
    speed_factor: float = 4.0
    seed: int = 0

    class Config(_AliasConfig):
        """BaseConfig for SynthConfig."""

    def __post_init__(self) -> None:
        """Validate the configuration invariants."""
        height, width = self.frame_size
        _require(height >= 16 and width >= 16, f"frame size must be >= 16x16, got {height}x{width}")
        _require(self.channels in (1, 3), f"channels must be 1 or 3, got {self.channels}")
        _require(self.frames_per_video >= 8, "frames_per_video must be >= 8")
        _require(
            min(self.num_normal_videos, self.num_test_normal_videos, self.num_anomalous_videos)
            >= 0,
            "video counts must be >= 0",
        )
        _require(
            self.num_anomalous_videos == 0 or len(self.anomaly_kinds) > 0,
            "at least one anomaly kind is required when anomalous videos are requested",
        )
        low, high = self.speed_range
        _require(0 < low <= high, f"speed_range must satisfy 0 < low <= high, got {self.speed_range}")
        _require(self.speed_factor > 1, f"speed_factor must be > 1, got {self.speed_factor}")


@dataclass(frozen=True)
class AcceptanceConfig(DataClassDictMixin):
    """Seeds and pass bars of the multi-seed synthetic benchmark run."""

    seeds: tuple[int, ...] = (0, 1, 2)
    min_mean_auc: float = 0.80
    max_loss_ratio: float = 0.5
    budget_seconds: float = 1200.0

    class Config(_AliasConfig):
        """BaseConfig for AcceptanceConfig."""

    def __post_init__(self) -> None:
        """Validate the configuration invariants."""
        _require(len(self.seeds) >= 1, "at least one seed is required")
        _require(
            len(set(self.seeds)) == len(self.seeds), f"seeds must be distinct, got {self.seeds}"
        )
        _require(
            0 <= self.min_mean_auc <= 1, f"min_mean_auc must lie in [0, 1], got {self.min_mean_auc}"
        )
        _require(self.max_loss_ratio > 0, f"max_loss_ratio must be > 0, got {self.max_loss_ratio}")
        _require(self.budget_seconds > 0, f"budget_seconds must be > 0, got {self.budget_seconds}")


@dataclass(frozen=True)
class VideoRecord(DataClassDictMixin):
    """One video of a dataset split; immutable after load."""

    video_id: str
    frame_count: int
    path: Path = field(
        metadata=field_options(serialization_strategy=PathSerializationStrategy())
    )
    labels: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        """Check labels against the frame count."""
        if self.labels is None:
            return
        if len(self.labels) != self.frame_count:
            raise DatasetValidationException(
                f"video {self.video_id}: {len(self.labels)} labels for "
                f"{self.frame_count} frames"
            )


@dataclass
class Frame:
    """A decoded frame, H x W x C with intensities in [-1, 1]."""

    pixels: np.ndarray
    index: int


@dataclass
class FrameClip:
    """Consecutive frames of one video."""

    frames: list[Frame]
    video_id: str
    start_index: int

    def __post_init__(self) -> None:
        """Check that the frames are consecutive."""
        for offset, frame in enumerate(self.frames):
            if frame.index != self.start_index + offset:
                raise ConfigException(
                    f"clip of {self.video_id} is not consecutive at position {offset}"
                )

    def __len__(self) -> int:
        """Return the number of frames."""
        return len(self.frames)

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Return the clip as an L x C x H x W tensor."""
        stacked = np.stack([frame.pixels for frame in self.frames])
        return torch.from_numpy(stacked).permute(0, 3, 1, 2).to(dtype).contiguous()


@dataclass
class ScoreSeries(DataClassDictMixin):
    """Per-frame MAE and normalized anomaly score of one video."""

    video_id: str
    frame_index: list[int]
    mae: list[float]
    score: list[float]
    scored: list[bool]

    @property
    def scored_indices(self) -> list[int]:
        """Return positions of the frames that have a prediction."""
        return [pos for pos, flag in enumerate(self.scored) if flag]


@dataclass
class RocResult(DataClassDictMixin):
    """A receiver operating characteristic and its area."""

    thresholds: list[float]
    tpr: list[float]
    fpr: list[float]
    auc: float


@dataclass
class EpochRecord(DataClassDictMixin):
    """Losses of one training epoch."""

    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainReport(DataClassDictMixin):
    """Result of a training run."""

    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    wall_clock_seconds: float = 0.0
    stopped_early: bool = False


@dataclass
class RunManifest(DataClassDictMixin):
    """What a command ran with and what it produced."""

    command: str
    config: dict[str, str]
    seed: int
    inputs: list[str]
    outputs: list[str]
    started_at: datetime
    finished_at: datetime | None = None
    checksums: dict[str, str] = field(default_factory=dict)
