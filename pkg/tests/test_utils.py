"""Tests for vadlstm utils."""

import json
from datetime import UTC, datetime
from pathlib import Path

import pytest
from freezegun import freeze_time
from syrupy import SnapshotAssertion

from vadlstm.const import AnomalyKind, L1Filter
from vadlstm.exceptions import ConfigException, OutputLockedException
from vadlstm.model import LossConfig, ModelConfig, RunManifest, SynthConfig, TrainConfig
from vadlstm.utils import (
    OutputLock,
    build_config,
    checksums,
    config_differences,
    file_sha256,
    format_config,
    format_value,
    load_config_file,
    merge_configs,
    parse_config_text,
    parse_value,
    read_manifest,
    write_manifest,
)


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("9", 9),
        ("5e-4", 5e-4),
        ("true", True),
        ("Off", False),
        ("none", None),
        ("gaussian", "gaussian"),
        ("32,32", (32, 32)),
        ("32,", (32,)),
        (" speed , direction ", ("speed", "direction")),
    ],
)
def test_parse_value(text: str, expected: object) -> None:
    """Test scalar and tuple parsing."""
    assert parse_value(text) == expected


def test_format_value() -> None:
    """Test that formatted values parse back."""
    assert format_value(None) == "none"
    assert format_value(True) == "true"
    assert format_value(L1Filter.IDENTITY) == "identity"
    assert format_value((64,)) == "64,"
    assert format_value([32, 32]) == "32,32"
    assert parse_value(format_value((64,))) == (64,)


def test_parse_config_text() -> None:
    """Test sections, aliases and comments."""
    sections = parse_config_text(
        "# ablation\nmodel.T = 5\nmodel.att = false  # no masks\n\nloss.lambda = 0.5\n"
    )
    assert sections == {"model": {"T": 5, "att": False}, "loss": {"lambda": 0.5}}


@pytest.mark.parametrize(
    ("text", "message"),
    [
        ("model.T 5", "expected `key = value`"),
        ("optimizer.lr = 1", "must start with one of"),
        ("T = 5", "must start with one of"),
    ],
)
def test_parse_config_text_errors(text: str, message: str) -> None:
    """Test that malformed lines name their location."""
    with pytest.raises(ConfigException, match=message):
        parse_config_text(text, source="run.cfg")


def test_build_config_accepts_aliases_and_names() -> None:
    """Test alias keys and one-element tuples."""
    config = build_config(
        ModelConfig,
        {"T": 5, "n": 3, "stage_channels": 64, "frame_size": (64, 64), "bi": False},
        "model",
    )
    assert config.input_length == 5
    assert config.prediction_offset == 3
    assert config.stage_channels == (64,)
    assert not config.enable_bi
    train = build_config(TrainConfig, {"lr": 1e-3, "stride": 2}, "train")
    assert train.learning_rate == 1e-3
    assert train.clip_stride == 2
    synth = build_config(SynthConfig, {"anomaly_kinds": "direction"}, "synth")
    assert synth.anomaly_kinds == (AnomalyKind.DIRECTION,)


def test_build_config_rejects_unknown_keys() -> None:
    """Test that typos are not silently ignored."""
    with pytest.raises(ConfigException, match="model.depth"):
        build_config(ModelConfig, {"depth": 3}, "model")


def test_build_config_wraps_invalid_values() -> None:
    """Test that invalid values and broken invariants are config errors."""
    with pytest.raises(ConfigException):
        build_config(LossConfig, {"l1_filter": "median"}, "loss")
    with pytest.raises(ConfigException, match="val_ratio"):
        build_config(TrainConfig, {"val_ratio": 1.5}, "train")


def test_format_config_round_trip() -> None:
    """Test that a formatted config builds the same config."""
    config = ModelConfig(stage_channels=(16,), frame_size=(16, 16), enable_sho=False)
    sections = parse_config_text(format_config(model=config, loss=LossConfig(lambda_=0.3)))
    assert build_config(ModelConfig, sections["model"], "model") == config
    assert build_config(LossConfig, sections["loss"], "loss") == LossConfig(lambda_=0.3)


def test_format_default_model_config(snapshot: SnapshotAssertion) -> None:
    """Test the key file format of the default model."""
    assert format_config(model=ModelConfig()).splitlines() == snapshot


def test_merge_and_differences() -> None:
    """Test override merging and difference listing."""
    merged = merge_configs(
        {"model": {"T": 9, "n": 7}}, {"model": {"n": 3}, "train": {"lr": 0.1}}
    )
    assert merged == {"model": {"T": 9, "n": 3}, "train": {"lr": 0.1}}
    assert config_differences(ModelConfig(), ModelConfig(prediction_offset=3)) == [
        "n: 7 != 3"
    ]
    assert config_differences(ModelConfig(), ModelConfig()) == []


def test_load_config_file(tmp_path: Path) -> None:
    """Test reading a file and the missing file error."""
    path = tmp_path / "run.cfg"
    path.write_text("train.max_epochs = 3\n", encoding="utf-8")
    assert load_config_file(path) == {"train": {"max_epochs": 3}}
    with pytest.raises(ConfigException, match="cannot read"):
        load_config_file(tmp_path / "missing.cfg")


def test_checksums(tmp_path: Path) -> None:
    """Test relative keys and sha256 digests."""
    (tmp_path / "a").mkdir()
    empty = tmp_path / "a" / "empty.txt"
    empty.write_bytes(b"")
    assert file_sha256(empty) == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )
    assert list(checksums([empty, tmp_path / "gone"], tmp_path)) == ["a/empty.txt"]


@freeze_time("2026-01-02 03:04:05")
def test_manifest_round_trip(tmp_path: Path) -> None:
    """Test the manifest file."""
    now = datetime.now(tz=UTC)
    manifest = RunManifest(
        command="synth",
        config={"synth.seed": "3"},
        seed=3,
        inputs=[],
        outputs=["train/video_000/000000.png"],
        started_at=now,
        finished_at=now,
        checksums={"train/video_000/000000.png": "00"},
    )
    path = tmp_path / "manifest.json"
    write_manifest(manifest, path)
    stored = json.loads(path.read_text(encoding="utf-8"))
    assert stored["started_at"] == "2026-01-02T03:04:05+00:00"
    assert list(stored) == sorted(stored)
    assert read_manifest(path) == manifest
    assert not (tmp_path / "manifest.json.tmp").exists()


def test_output_lock(tmp_path: Path) -> None:
    """Test that a second writer is refused and the lock is released."""
    with OutputLock(tmp_path / "out") as lock:
        assert lock.path.exists()
        with pytest.raises(OutputLockedException), OutputLock(tmp_path / "out"):
            pass
    assert not (tmp_path / "out" / ".vad.lock").exists()
