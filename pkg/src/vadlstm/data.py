"""Frame-directory datasets, the synthetic benchmark and clip sampling.

Layout on disk::

    <root>/train/<video_id>/<frame_index:06d>.png
    <root>/test/<video_id>/<frame_index:06d>.png
    <root>/test/<video_id>.labels
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from .const import (
    FRAME_NAME_FMT,
    FRAME_SUFFIX,
    LABEL_SUFFIX,
    PIXEL_MAX,
    SYNTH_VIDEO_FMT,
    AnomalyKind,
    Split,
)
from .exceptions import (
    DatasetIOException,
    DatasetValidationException,
    RangeException,
)
from .model import Frame, FrameClip, SynthConfig, VideoRecord

_LOGGER = logging.getLogger(__name__)

_GRAYSCALE_MODES = {"1", "L", "LA", "I", "I;16", "F"}


def normalize_pixels(values: np.ndarray) -> np.ndarray:
    """Map 8-bit intensities [0, 255] linearly onto [-1, 1]."""
    return np.asarray(values, dtype=np.float64) / (PIXEL_MAX / 2) - 1.0


def denormalize_pixels(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] intensities back to 8-bit values."""
    scaled = (np.asarray(values, dtype=np.float64) + 1.0) * (PIXEL_MAX / 2)
    return np.clip(np.rint(scaled), 0, PIXEL_MAX).astype(np.uint8)


def parse_labels(text: str, frame_count: int, video_id: str) -> tuple[int, ...]:
    """Parse a whitespace separated 0/1 label file."""
    tokens = text.split()
    if len(tokens) != frame_count:
        raise DatasetValidationException(
            f"video {video_id}: label file has {len(tokens)} entries "
            f"for {frame_count} frames"
        )
    invalid = sorted({token for token in tokens if token not in ("0", "1")})
    if invalid:
        raise DatasetValidationException(
            f"video {video_id}: labels must be 0 or 1, found {invalid}"
        )
    return tuple(int(token) for token in tokens)


def _frame_indices(video_dir: Path) -> list[int]:
    indices = []
    for frame_path in video_dir.glob(f"*{FRAME_SUFFIX}"):
        if not frame_path.stem.isdigit():
            raise DatasetValidationException(
                f"video {video_dir.name}: unexpected frame file {frame_path.name}"
            )
        indices.append(int(frame_path.stem))
    return sorted(indices)


def load_dataset(root_path: Path | str, split: Split | str) -> list[VideoRecord]:
    """Return one record per video directory of a split."""
    split = Split(split)
    split_dir = Path(root_path) / split
    if not split_dir.is_dir():
        raise DatasetIOException(f"dataset split directory {split_dir} does not exist")

    records = []
    for video_dir in sorted(path for path in split_dir.iterdir() if path.is_dir()):
        video_id = video_dir.name
        indices = _frame_indices(video_dir)
        if indices != list(range(len(indices))):
            missing = sorted(set(range(max(indices, default=-1) + 1)) - set(indices))
            raise DatasetValidationException(
                f"video {video_id}: frame numbering is not contiguous from 0 "
                f"(missing {missing[:5]})"
            )
        labels = None
        label_path = split_dir / f"{video_id}{LABEL_SUFFIX}"
        if split is Split.TEST and label_path.is_file():
            labels = parse_labels(
                label_path.read_text(encoding="ascii"), len(indices), video_id
            )
        records.append(
            VideoRecord(
                video_id=video_id,
                frame_count=len(indices),
                path=video_dir,
                labels=labels,
            )
        )
    _LOGGER.debug("Loaded %s videos from %s", len(records), split_dir)
    return records


def read_frame(path: Path, target_size: tuple[int, int] | None = None) -> np.ndarray:
    """Decode one frame into an H x W x C array in [-1, 1].

    Resizing is bilinear on float channels, before any rounding.
    """
    try:
        with Image.open(path) as image:
            mode = "L" if image.mode in _GRAYSCALE_MODES else "RGB"
            bands = [band.convert("F") for band in image.convert(mode).split()]
            if target_size is not None:
                height, width = target_size
                bands = [
                    band
                    if band.size == (width, height)
                    else band.resize((width, height), Image.Resampling.BILINEAR)
                    for band in bands
                ]
            array = np.stack([np.asarray(band, dtype=np.float64) for band in bands], axis=-1)
    except OSError as err:
        raise DatasetIOException(f"cannot decode frame {path}: {err}") from err
    return np.clip(normalize_pixels(array), -1.0, 1.0).astype(np.float32)


def frame_shape(record: VideoRecord) -> tuple[int, int, int]:
    """Return the native H, W, C of a video's first frame."""
    height, width, channels = read_frame(record.path / FRAME_NAME_FMT.format(0)).shape
    return height, width, channels


def check_pixel_range(batch: torch.Tensor, context: str) -> None:
    """Raise when a decoded batch leaves [-1, 1]."""
    if batch.numel() and (batch.min() < -1.0 or batch.max() > 1.0 or batch.isnan().any()):
        raise DatasetValidationException(
            f"pixels outside [-1, 1] at {context}: "
            f"min {batch.min().item():.6g}, max {batch.max().item():.6g}"
        )


def load_clip(
    record: VideoRecord,
    start: int,
    length: int,
    target_size: tuple[int, int] | None = None,
) -> FrameClip:
    """Decode `length` consecutive frames of a video starting at `start`."""
    if start < 0 or length < 1 or start + length > record.frame_count:
        raise RangeException(
            f"video {record.video_id}: frames [{start}, {start + length}) "
            f"outside of [0, {record.frame_count})"
        )
    frames = [
        Frame(
            pixels=read_frame(record.path / FRAME_NAME_FMT.format(index), target_size),
            index=index,
        )
        for index in range(start, start + length)
    ]
    return FrameClip(frames=frames, video_id=record.video_id, start_index=start)


def training_windows(
    records: Sequence[VideoRecord],
    clip_length: int,
    stride: int,
    shuffle_seed: int | None = None,
) -> list[tuple[VideoRecord, int]]:
    """Return every (video, start) window; shuffled when a seed is given."""
    windows = []
    for record in records:
        if record.frame_count < clip_length:
            _LOGGER.warning(
                "Video %s has %s frames, fewer than the clip length %s; skipped",
                record.video_id,
                record.frame_count,
                clip_length,
            )
            continue
        windows.extend(
            (record, start)
            for start in range(0, record.frame_count - clip_length + 1, stride)
        )
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(windows))
        windows = [windows[position] for position in order]
    return windows


def iter_training_clips(
    records: Sequence[VideoRecord],
    clip_length: int,
    stride: int,
    shuffle_seed: int,
    target_size: tuple[int, int] | None = None,
) -> Iterator[FrameClip]:
    """Yield every training window once, in a seed-determined order."""
    for record, start in training_windows(records, clip_length, stride, shuffle_seed):
        yield load_clip(record, start, clip_length, target_size)


class ClipDataset(Dataset[torch.Tensor]):
    """Map-style dataset of clip windows, decoded lazily by DataLoader workers."""

    def __init__(
        self,
        windows: Sequence[tuple[VideoRecord, int]],
        clip_length: int,
        target_size: tuple[int, int] | None = None,
    ) -> None:
        """Initialize the dataset over precomputed windows."""
        self.windows = list(windows)
        self.clip_length = clip_length
        self.target_size = target_size

    def __len__(self) -> int:
        """Return the number of windows."""
        return len(self.windows)

    def __getitem__(self, position: int) -> torch.Tensor:
        """Return the clip at `position` as an L x C x H x W tensor."""
        record, start = self.windows[position]
        return load_clip(record, start, self.clip_length, self.target_size).to_tensor()


@dataclass
class _Square:
    """A square sprite moving with reflection at the frame borders."""

    position: np.ndarray
    velocity: np.ndarray
    side: int
    color: np.ndarray

    def advance(self, limits: np.ndarray, scale: float = 1.0) -> None:
        """Move by `scale` times the velocity, reflecting at the walls."""
        position = self.position + self.velocity * scale
        for axis in range(2):
            if position[axis] < 0:
                position[axis] = -position[axis]
                self.velocity[axis] = -self.velocity[axis]
            elif position[axis] > limits[axis]:
                position[axis] = 2 * limits[axis] - position[axis]
                self.velocity[axis] = -self.velocity[axis]
        self.position = np.clip(position, 0, limits)

    def draw(self, canvas: np.ndarray) -> None:
        """Paint the square onto an H x W x C canvas."""
        top, left = (int(round(value)) for value in self.position)
        canvas[top : top + self.side, left : left + self.side] = self.color


def _random_square(
    rng: np.random.Generator, config: SynthConfig, side: int
) -> _Square:
    height, width = config.frame_size
    angle = rng.uniform(0, 2 * math.pi)
    speed = rng.uniform(*config.speed_range)
    if config.channels == 1:
        color = np.array([255], dtype=np.uint8)
    else:
        color = rng.integers(128, 256, size=3).astype(np.uint8)
    return _Square(
        position=rng.uniform([0, 0], [height - side, width - side]),
        velocity=np.array([math.sin(angle), math.cos(angle)]) * speed,
        side=side,
        color=color,
    )


def anomalous_segment(rng: np.random.Generator, frame_count: int) -> tuple[int, int]:
    """Return the inclusive [first, last] frames of an injected anomaly."""
    length = int(rng.integers(frame_count // 6, frame_count // 4 + 1))
    length = max(length, 1)
    first = int(rng.integers(frame_count // 4, frame_count - length + 1))
    return first, first + length - 1


def render_video(
    config: SynthConfig, rng: np.random.Generator, kind: AnomalyKind | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Render one video as uint8 N x H x W x C frames plus its 0/1 labels."""
    height, width = config.frame_size
    count = config.frames_per_video
    side = max(2, round(height / 8))
    limits = np.array([height - side, width - side], dtype=np.float64)
    square = _random_square(rng, config, side)
    intruder = _random_square(rng, config, side)

    labels = np.zeros(count, dtype=np.int64)
    first, last = -1, -1
    if kind is not None:
        first, last = anomalous_segment(rng, count)
        labels[first : last + 1] = 1

    frames = np.zeros((count, height, width, config.channels), dtype=np.uint8)
    for index in range(count):
        if index > 0:
            if kind is AnomalyKind.DIRECTION and index in (first, last + 1):
                square.velocity = -square.velocity
            scale = config.speed_factor if kind is AnomalyKind.SPEED and labels[index] else 1.0
            square.advance(limits, scale)
        square.draw(frames[index])
        if kind is AnomalyKind.EXTRA_OBJECT and labels[index]:
            intruder.draw(frames[index])
            intruder.advance(limits)
    return frames, labels


def _write_video(frames: np.ndarray, video_dir: Path) -> list[Path]:
    video_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for index, pixels in enumerate(frames):
        path = video_dir / FRAME_NAME_FMT.format(index)
        image = Image.fromarray(pixels[..., 0] if pixels.shape[-1] == 1 else pixels)
        image.save(path, format="PNG")
        written.append(path)
    return written


def synthetic_plan(config: SynthConfig) -> list[tuple[Split, int, AnomalyKind | None]]:
    """Return (split, video number, anomaly kind) of every synthetic video in write order."""
    plan: list[tuple[Split, int, AnomalyKind | None]] = [
        (Split.TRAIN, number, None) for number in range(config.num_normal_videos)
    ]
    plan += [
        (Split.TEST, number, None) for number in range(config.num_test_normal_videos)
    ]
    plan += [
        (
            Split.TEST,
            config.num_test_normal_videos + number,
            config.anomaly_kinds[number % len(config.anomaly_kinds)],
        )
        for number in range(config.num_anomalous_videos)
    ]
    return plan


def generate_synthetic(config: SynthConfig, out_path: Path | str) -> list[Path]:
    """Write the moving-square benchmark and return the written files.

    Training videos are normal. The test split holds normal videos followed by
    anomalous ones; every test video gets a label file. The output is a pure
    function of ``config.seed``.
    """
    root = Path(out_path)
    written: list[Path] = []
    plan = synthetic_plan(config)
    try:
        for split in Split:
            (root / split).mkdir(parents=True, exist_ok=True)
        for split, number, kind in plan:
            video_id = SYNTH_VIDEO_FMT.format(number)
            rng = np.random.default_rng([config.seed, list(Split).index(split), number])
            frames, labels = render_video(config, rng, kind)
            written += _write_video(frames, root / split / video_id)
            if split is Split.TEST:
                label_path = root / split / f"{video_id}{LABEL_SUFFIX}"
                label_path.write_text(
                    " ".join(str(label) for label in labels) + "\n", encoding="ascii"
                )
                written.append(label_path)
            _LOGGER.debug(
                "Wrote %s/%s (%s frames, anomaly=%s)", split, video_id, len(frames), kind
            )
    except OSError as err:
        raise DatasetIOException(f"cannot write synthetic dataset to {root}: {err}") from err
    _LOGGER.info("Synthetic dataset with %s videos written to %s", len(plan), root)
    return written
