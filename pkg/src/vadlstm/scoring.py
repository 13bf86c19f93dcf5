"""Per-frame anomaly scores and frame-level ROC/AUC."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
import torch

from .const import Pooling
from .data import load_clip
from .exceptions import AucUndefinedException, ConfigException, ShapeException
from .losses import l1_loss
from .model import ModelConfig, RocResult, ScoreSeries, VideoRecord
from .network import BidirectionalPredictor, predict

_LOGGER = logging.getLogger(__name__)

ErrorMapSink = Callable[[str, int, np.ndarray], None]


def normalize_scores(mae: Sequence[float] | np.ndarray) -> np.ndarray:
    """Min-max normalize MAE values to [0, 1]; a constant series maps to zeros."""
    values = np.asarray(mae, dtype=np.float64)
    if values.size == 0:
        return values
    low, high = values.min(), values.max()
    if high == low:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def roc_auc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> RocResult:
    """Sweep thresholds over the distinct scores and integrate the ROC.

    Equal scores form a single step, which counts ties as one half in the
    equivalent pairwise (Mann-Whitney) formulation.
    """
    values = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(labels, dtype=np.int64)
    if values.shape != truth.shape or values.ndim != 1:
        raise ShapeException(
            f"{values.shape} scores do not match {truth.shape} labels"
        )
    if not np.isin(truth, (0, 1)).all():
        raise ConfigException("labels must be 0 or 1")
    positives = int(truth.sum())
    negatives = truth.size - positives
    if positives == 0 or negatives == 0:
        raise AucUndefinedException("AUC undefined: labels contain a single class")

    order = np.argsort(-values, kind="mergesort")
    ranked, ranked_truth = values[order], truth[order]
    group_ends = np.r_[np.flatnonzero(np.diff(ranked)), ranked.size - 1]
    true_positives = np.cumsum(ranked_truth)[group_ends]
    false_positives = group_ends + 1 - true_positives
    tpr = np.r_[0.0, true_positives / positives]
    fpr = np.r_[0.0, false_positives / negatives]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocResult(
        thresholds=[float("inf"), *ranked[group_ends].tolist()],
        tpr=tpr.tolist(),
        fpr=fpr.tolist(),
        auc=auc,
    )


def scorable_frames(frame_count: int, config: ModelConfig) -> range:
    """Return the frames that have a full input window."""
    last = frame_count - max(config.input_length - config.history, 0)
    return range(config.history, max(last, config.history))


def score_video(
    model: BidirectionalPredictor,
    record: VideoRecord,
    config: ModelConfig,
    *,
    batch_size: int = 16,
    error_map_sink: ErrorMapSink | None = None,
) -> ScoreSeries | None:
    """Score every frame of a video, or return None when it is too short.

    Frame f is compared with fused prediction number `test_prediction_index`
    of the clip starting at f - (n + index - 1).
    """
    if record.frame_count < config.clip_length:
        _LOGGER.warning(
            "Video %s has %s frames, fewer than T + n = %s; skipped",
            record.video_id,
            record.frame_count,
            config.clip_length,
        )
        return None
    video = load_clip(record, 0, record.frame_count, config.frame_size).to_tensor()
    targets = list(scorable_frames(record.frame_count, config))
    position = config.test_prediction_index - 1
    mae = np.zeros(record.frame_count, dtype=np.float64)

    model.eval()
    with torch.no_grad():
        for offset in range(0, len(targets), batch_size):
            chunk = targets[offset : offset + batch_size]
            clips = torch.stack(
                [
                    video[frame - config.history : frame - config.history + config.input_length]
                    for frame in chunk
                ]
            )
            fused = predict(model, clips).fused[:, position].to(video.dtype)
            for frame, prediction in zip(chunk, fused, strict=True):
                mae[frame] = float(l1_loss(video[frame], prediction))
                if error_map_sink is not None:
                    error = (prediction - video[frame]).abs().permute(1, 2, 0)
                    error_map_sink(record.video_id, frame, error.numpy())

    scored = np.zeros(record.frame_count, dtype=bool)
    scored[targets] = True
    score = np.zeros(record.frame_count, dtype=np.float64)
    score[scored] = normalize_scores(mae[scored])
    _LOGGER.debug("Scored %s frames of %s", len(targets), record.video_id)
    return ScoreSeries(
        video_id=record.video_id,
        frame_index=list(range(record.frame_count)),
        mae=mae.tolist(),
        score=score.tolist(),
        scored=scored.tolist(),
    )


@dataclass
class Evaluation:
    """Scores and AUCs of a labeled split; `pooled` is None for single-class labels."""

    series: list[ScoreSeries]
    per_video_auc: dict[str, float | None]
    pooled: RocResult | None
    pooled_frames: int
    pooled_abnormal: int
    pooling: Pooling = Pooling.PER_VIDEO
    skipped: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        """Return the score table, one row per frame."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["video_id", "frame_index", "mae", "score", "scored_flag"])
        for series in self.series:
            for index, mae, score, scored in zip(
                series.frame_index, series.mae, series.score, series.scored, strict=True
            ):
                writer.writerow(
                    [series.video_id, index, f"{mae:.10g}", f"{score:.10g}", int(scored)]
                )
        return buffer.getvalue()

    def summary(self) -> str:
        """Return per-video and pooled AUC with counts."""
        lines = []
        for series in self.series:
            auc = self.per_video_auc.get(series.video_id)
            auc_text = "undefined" if auc is None else f"{auc:.6f}"
            lines.append(
                f"{series.video_id} auc={auc_text} frames={len(series.frame_index)} "
                f"scored={sum(series.scored)}"
            )
        lines.extend(f"{video_id} skipped" for video_id in self.skipped)
        pooled_text = "undefined" if self.pooled is None else f"{self.pooled.auc:.6f}"
        lines.append(
            f"pooled auc={pooled_text} frames={self.pooled_frames} "
            f"abnormal={self.pooled_abnormal} pooling={self.pooling}"
        )
        return "\n".join(lines) + "\n"


def evaluate_dataset(
    model: BidirectionalPredictor,
    records: Sequence[VideoRecord],
    config: ModelConfig,
    *,
    pooling: Pooling | str = Pooling.PER_VIDEO,
    batch_size: int = 16,
    error_map_sink: ErrorMapSink | None = None,
) -> Evaluation:
    """Score every video and compute per-video and pooled frame-level AUC."""
    pooling = Pooling(pooling)
    for record in records:
        if record.labels is None:
            raise ConfigException(f"test video {record.video_id} has no labels")

    series_list: list[ScoreSeries] = []
    per_video: dict[str, float | None] = {}
    skipped: list[str] = []
    pooled_values: list[float] = []
    pooled_labels: list[int] = []
    for record in records:
        series = score_video(
            model, record, config, batch_size=batch_size, error_map_sink=error_map_sink
        )
        if series is None:
            skipped.append(record.video_id)
            continue
        series_list.append(series)
        assert record.labels is not None
        positions = series.scored_indices
        labels = [record.labels[pos] for pos in positions]
        source = series.score if pooling is Pooling.PER_VIDEO else series.mae
        values = [source[pos] for pos in positions]
        pooled_values += values
        pooled_labels += labels
        try:
            per_video[record.video_id] = roc_auc(values, labels).auc
        except AucUndefinedException:
            _LOGGER.debug("Video %s has a single class; no per-video AUC", record.video_id)
            per_video[record.video_id] = None

    pooled: RocResult | None = None
    try:
        pooled = roc_auc(pooled_values, pooled_labels)
    except AucUndefinedException:
        _LOGGER.warning(
            "Pooled AUC undefined: %s scored frames, %s abnormal",
            len(pooled_labels),
            sum(pooled_labels),
        )
    else:
        _LOGGER.info(
            "Pooled AUC %.4f over %s frames (%s abnormal)",
            pooled.auc,
            len(pooled_labels),
            sum(pooled_labels),
        )
    return Evaluation(
        series=series_list,
        per_video_auc=per_video,
        pooled=pooled,
        pooled_frames=len(pooled_labels),
        pooled_abnormal=sum(pooled_labels),
        pooling=pooling,
        skipped=skipped,
    )
