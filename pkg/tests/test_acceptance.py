"""Tests for the multi-seed synthetic benchmark run."""

from pathlib import Path

import pytest

from vadlstm.acceptance import (
    AcceptanceReport,
    SeedOutcome,
    ensure_accepted,
    run_acceptance,
)
from vadlstm.const import ACCEPTANCE_FILE, BEST_CHECKPOINT, SCORE_FILE, SUMMARY_FILE
from vadlstm.exceptions import AcceptanceFailedException, ConfigException
from vadlstm.model import (
    AcceptanceConfig,
    LossConfig,
    ModelConfig,
    SynthConfig,
    TrainConfig,
)


def _outcome(
    seed: int, auc: float | None, best: float = 0.2, seconds: float = 10.0
) -> SeedOutcome:
    return SeedOutcome(
        seed=seed,
        epochs=4,
        first_val_loss=1.0,
        best_val_loss=best,
        train_seconds=seconds,
        pooled_auc=auc,
        kind_auc={"speed": auc, "extra_object": None},
    )


def test_report_passes_when_every_bar_holds() -> None:
    """Test the mean AUC and the verdict."""
    report = AcceptanceReport(
        config=AcceptanceConfig(seeds=(0, 1)), outcomes=[_outcome(0, 0.9), _outcome(1, 0.8)]
    )
    assert report.mean_auc == pytest.approx(0.85)
    assert report.train_seconds == 20.0
    assert report.passed
    ensure_accepted(report)
    lines = report.describe().splitlines()
    assert lines[0] == (
        "seed 0: epochs=4 loss_ratio=0.200 train=10s auc=0.900000 "
        "extra_object=undefined speed=0.900000"
    )
    assert lines[-1] == "passed"


@pytest.mark.parametrize(
    ("outcomes", "message"),
    [
        ([_outcome(0, 0.9), _outcome(1, 0.6)], "mean pooled AUC 0.7500 below 0.8"),
        ([_outcome(0, 0.9), _outcome(1, None)], "mean pooled AUC undefined"),
        ([_outcome(0, 0.9), _outcome(1, 0.9, best=0.5)], "seed 1: best validation loss is 0.500"),
        ([_outcome(0, 0.9, seconds=700), _outcome(1, 0.9, seconds=600)], "training took 1300s"),
    ],
)
def test_report_names_missed_bars(outcomes: list[SeedOutcome], message: str) -> None:
    """Test every pass bar on its own."""
    report = AcceptanceReport(config=AcceptanceConfig(seeds=(0, 1)), outcomes=outcomes)
    assert not report.passed
    assert f"FAILED: {message}" in report.describe()
    assert report.describe().endswith("failed\n")
    with pytest.raises(AcceptanceFailedException, match=message):
        ensure_accepted(report)


def test_report_csv() -> None:
    """Test one row per seed with a column per anomaly kind."""
    report = AcceptanceReport(config=AcceptanceConfig(seeds=(3,)), outcomes=[_outcome(3, 0.75)])
    assert report.to_csv().splitlines() == [
        "seed,epochs,first_val_loss,best_val_loss,train_seconds,pooled_auc,"
        "auc_extra_object,auc_speed",
        "3,4,1,0.2,10.0,0.750000,undefined,0.750000",
    ]


@pytest.mark.parametrize(
    "changes",
    [
        {"seeds": ()},
        {"seeds": (1, 1)},
        {"min_mean_auc": 1.5},
        {"max_loss_ratio": 0.0},
        {"budget_seconds": -1.0},
    ],
)
def test_acceptance_config_validation(changes: dict[str, object]) -> None:
    """Test that malformed bars are rejected."""
    with pytest.raises(ConfigException):
        AcceptanceConfig(**changes)  # type: ignore[arg-type]


def test_tiny_run_writes_every_seed(
    tmp_path: Path,
    synth_config: SynthConfig,
    tiny_config: ModelConfig,
    loss_config: LossConfig,
    train_config: TrainConfig,
) -> None:
    """Test one seed end to end on the tiny model."""
    config = AcceptanceConfig(seeds=(11,), min_mean_auc=0.0, max_loss_ratio=10.0)
    report = run_acceptance(
        tmp_path, config, synth_config, tiny_config, loss_config, train_config
    )
    (outcome,) = report.outcomes
    assert outcome.seed == 11
    assert 1 <= outcome.epochs <= train_config.max_epochs
    assert outcome.best_val_loss <= outcome.first_val_loss
    assert outcome.pooled_auc is not None
    assert 0.0 <= outcome.pooled_auc <= 1.0
    assert set(outcome.kind_auc) == {"speed", "extra_object"}
    assert report.passed
    seed_dir = tmp_path / "seed_11"
    assert (seed_dir / "run" / BEST_CHECKPOINT).exists()
    assert (seed_dir / SCORE_FILE).exists()
    assert (tmp_path / ACCEPTANCE_FILE).read_text().startswith("seed,epochs,")
    assert (tmp_path / SUMMARY_FILE).read_text().endswith("passed\n")


@pytest.mark.slow
def test_desk_defaults_pass(tmp_path: Path) -> None:
    """Test the shipped defaults against the pass bars on three seeds."""
    report = run_acceptance(
        tmp_path,
        AcceptanceConfig(),
        SynthConfig(),
        ModelConfig(),
        LossConfig(),
        TrainConfig(),
    )
    assert report.passed, report.describe()
