"""Multi-seed end-to-end run on the synthetic benchmark.

Every seed renders its own dataset, trains a fresh model and scores the test
split. The run passes when each seed converges within the time budget and the
pooled frame-level AUC, averaged over the seeds, reaches the bar.
"""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from mashumaro import DataClassDictMixin

from .const import ACCEPTANCE_FILE, SCORE_FILE, SUMMARY_FILE, SYNTH_VIDEO_FMT, Pooling, Split
from .data import generate_synthetic, load_dataset, synthetic_plan
from .exceptions import AcceptanceFailedException, AucUndefinedException
from .model import (
    AcceptanceConfig,
    LossConfig,
    ModelConfig,
    SynthConfig,
    TrainConfig,
    VideoRecord,
)
from .network import build_model
from .scoring import Evaluation, evaluate_dataset, roc_auc
from .trainer import split_train_val, train
from .utils import seed_everything, write_text_atomic

_LOGGER = logging.getLogger(__name__)


@dataclass
class SeedOutcome(DataClassDictMixin):
    """Convergence and AUC of one seed."""

    seed: int
    epochs: int
    first_val_loss: float
    best_val_loss: float
    train_seconds: float
    pooled_auc: float | None
    kind_auc: dict[str, float | None] = field(default_factory=dict)

    @property
    def loss_ratio(self) -> float:
        """Return best over epoch-1 validation loss."""
        return self.best_val_loss / self.first_val_loss


@dataclass
class AcceptanceReport(DataClassDictMixin):
    """Outcomes of every seed against the pass bars."""

    config: AcceptanceConfig
    outcomes: list[SeedOutcome] = field(default_factory=list)

    @property
    def train_seconds(self) -> float:
        """Return the training time summed over seeds."""
        return sum(outcome.train_seconds for outcome in self.outcomes)

    @property
    def mean_auc(self) -> float | None:
        """Return the pooled AUC averaged over seeds, None if any is undefined."""
        values = [outcome.pooled_auc for outcome in self.outcomes]
        defined = [value for value in values if value is not None]
        if not values or len(defined) != len(values):
            return None
        return float(np.mean(defined))

    def failures(self) -> list[str]:
        """Return one line per missed bar."""
        failed = []
        for outcome in self.outcomes:
            if outcome.loss_ratio >= self.config.max_loss_ratio:
                failed.append(
                    f"seed {outcome.seed}: best validation loss is {outcome.loss_ratio:.3f} "
                    f"of epoch 1, needs < {self.config.max_loss_ratio}"
                )
        if self.train_seconds > self.config.budget_seconds:
            failed.append(
                f"training took {self.train_seconds:.0f}s, "
                f"budget {self.config.budget_seconds:.0f}s"
            )
        mean_auc = self.mean_auc
        if mean_auc is None:
            failed.append("mean pooled AUC undefined")
        elif mean_auc < self.config.min_mean_auc:
            failed.append(
                f"mean pooled AUC {mean_auc:.4f} below {self.config.min_mean_auc}"
            )
        return failed

    @property
    def passed(self) -> bool:
        """Return True when every bar holds."""
        return not self.failures()

    def to_csv(self) -> str:
        """Return one row per seed."""
        kinds = sorted({kind for outcome in self.outcomes for kind in outcome.kind_auc})
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(
            [
                "seed",
                "epochs",
                "first_val_loss",
                "best_val_loss",
                "train_seconds",
                "pooled_auc",
                *(f"auc_{kind}" for kind in kinds),
            ]
        )
        for outcome in self.outcomes:
            writer.writerow(
                [
                    outcome.seed,
                    outcome.epochs,
                    f"{outcome.first_val_loss:.10g}",
                    f"{outcome.best_val_loss:.10g}",
                    f"{outcome.train_seconds:.1f}",
                    _format_auc(outcome.pooled_auc),
                    *(_format_auc(outcome.kind_auc.get(kind)) for kind in kinds),
                ]
            )
        return buffer.getvalue()

    def describe(self) -> str:
        """Return per-seed lines, the mean AUC and the verdict."""
        lines = [
            f"seed {outcome.seed}: epochs={outcome.epochs} "
            f"loss_ratio={outcome.loss_ratio:.3f} train={outcome.train_seconds:.0f}s "
            f"auc={_format_auc(outcome.pooled_auc)} "
            + " ".join(
                f"{kind}={_format_auc(auc)}" for kind, auc in sorted(outcome.kind_auc.items())
            )
            for outcome in self.outcomes
        ]
        lines.append(
            f"mean auc={_format_auc(self.mean_auc)} over {len(self.outcomes)} seeds, "
            f"train={self.train_seconds:.0f}s of {self.config.budget_seconds:.0f}s"
        )
        lines += [f"FAILED: {failure}" for failure in self.failures()]
        lines.append("passed" if self.passed else "failed")
        return "\n".join(lines) + "\n"


def _format_auc(value: float | None) -> str:
    return "undefined" if value is None else f"{value:.6f}"


def kind_aucs(
    evaluation: Evaluation, records: Sequence[VideoRecord], synth_config: SynthConfig
) -> dict[str, float | None]:
    """Pool the normal test videos with the videos of each anomaly kind."""
    kinds = {
        SYNTH_VIDEO_FMT.format(number): kind
        for split, number, kind in synthetic_plan(synth_config)
        if split is Split.TEST
    }
    labels = {record.video_id: record.labels for record in records}
    result: dict[str, float | None] = {}
    for kind in dict.fromkeys(kind for kind in kinds.values() if kind is not None):
        values: list[float] = []
        truth: list[int] = []
        for series in evaluation.series:
            if kinds.get(series.video_id) not in (None, kind):
                continue
            video_labels = labels[series.video_id]
            assert video_labels is not None
            source = series.score if evaluation.pooling is Pooling.PER_VIDEO else series.mae
            values += [source[pos] for pos in series.scored_indices]
            truth += [video_labels[pos] for pos in series.scored_indices]
        try:
            result[str(kind)] = roc_auc(values, truth).auc
        except AucUndefinedException:
            result[str(kind)] = None
    return result


def run_seed(
    seed: int,
    out_dir: Path,
    synth_config: SynthConfig,
    model_config: ModelConfig,
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> SeedOutcome:
    """Render, train and score one seed under `out_dir`."""
    synth_config = replace(synth_config, seed=seed)
    model_config = replace(model_config, seed=seed, in_channels=synth_config.channels)
    train_config = replace(train_config, seed=seed)
    data_dir = out_dir / "data"
    generate_synthetic(synth_config, data_dir)

    seed_everything(seed)
    splits = split_train_val(load_dataset(data_dir, Split.TRAIN), train_config.val_ratio, seed)
    model = build_model(model_config)
    result = train(model, splits, loss_config, train_config, out_dir=out_dir / "run")

    records = load_dataset(data_dir, Split.TEST)
    evaluation = evaluate_dataset(model, records, model_config)
    write_text_atomic(out_dir / SCORE_FILE, evaluation.to_csv())
    write_text_atomic(out_dir / SUMMARY_FILE, evaluation.summary())
    report = result.report
    outcome = SeedOutcome(
        seed=seed,
        epochs=len(report.epochs),
        first_val_loss=report.epochs[0].val_loss,
        best_val_loss=report.best_val_loss,
        train_seconds=report.wall_clock_seconds,
        pooled_auc=None if evaluation.pooled is None else evaluation.pooled.auc,
        kind_auc=kind_aucs(evaluation, records, synth_config),
    )
    _LOGGER.info(
        "Seed %s: loss ratio %.3f after %s epochs, pooled AUC %s",
        seed,
        outcome.loss_ratio,
        outcome.epochs,
        _format_auc(outcome.pooled_auc),
    )
    return outcome


def run_acceptance(
    out_dir: Path,
    config: AcceptanceConfig,
    synth_config: SynthConfig,
    model_config: ModelConfig,
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> AcceptanceReport:
    """Run every seed and write the per-seed table and the verdict.

    Unless `train_config.max_seconds` is set, each seed trains for at most its
    share of the budget.
    """
    if train_config.max_seconds is None:
        train_config = replace(
            train_config, max_seconds=config.budget_seconds / len(config.seeds)
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    report = AcceptanceReport(config=config)
    for seed in config.seeds:
        report.outcomes.append(
            run_seed(
                seed,
                out_dir / f"seed_{seed}",
                synth_config,
                model_config,
                loss_config,
                train_config,
            )
        )
    write_text_atomic(out_dir / ACCEPTANCE_FILE, report.to_csv())
    write_text_atomic(out_dir / SUMMARY_FILE, report.describe())
    return report


def ensure_accepted(report: AcceptanceReport) -> None:
    """Raise naming every missed bar."""
    failures = report.failures()
    if failures:
        raise AcceptanceFailedException("; ".join(failures))
