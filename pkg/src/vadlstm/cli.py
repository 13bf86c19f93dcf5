"""Command line interface: `vad <synth|train|eval|verify|accept> [flags]`."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .acceptance import ensure_accepted, run_acceptance
from .const import (
    ACCEPTANCE_FILE,
    ERROR_MAP_DIR,
    FRAME_NAME_FMT,
    MANIFEST_FILE,
    PIXEL_MAX,
    SCORE_FILE,
    SUMMARY_FILE,
    AnomalyKind,
    ExitCode,
    Pooling,
    Split,
    Suite,
)
from .data import frame_shape, generate_synthetic, load_dataset
from .exceptions import (
    CheckpointMismatchException,
    ConfigException,
    VadException,
)
from .model import (
    AcceptanceConfig,
    LossConfig,
    ModelConfig,
    RunManifest,
    SynthConfig,
    TrainConfig,
)
from .network import build_model
from .scoring import evaluate_dataset
from .trainer import (
    load_checkpoint,
    read_checkpoint_config,
    sidecar_path,
    split_train_val,
    train,
)
from .utils import (
    OutputLock,
    build_config,
    checksums,
    format_value,
    load_config_file,
    merge_configs,
    parse_config_text,
    seed_everything,
    write_manifest,
    write_text_atomic,
)
from .verify import ensure_passed, run_suites

_LOGGER = logging.getLogger(__name__)

Sections = dict[str, dict[str, Any]]


def _anomaly_kinds(text: str) -> tuple[AnomalyKind, ...]:
    valid = ", ".join(kind.value for kind in AnomalyKind)
    kinds = []
    for token in filter(None, (part.strip() for part in text.split(","))):
        try:
            kinds.append(AnomalyKind(token))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"unknown anomaly kind {token!r} (valid kinds: {valid})"
            ) from None
    return tuple(kinds)


def _frame_size(text: str) -> tuple[int, int]:
    try:
        height, width = (int(part) for part in text.lower().replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"frame size must look like 32x32, got {text!r}"
        ) from None
    return height, width


def _suites(text: str) -> list[Suite]:
    valid = ", ".join(suite.value for suite in Suite)
    try:
        return [Suite(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown suite in {text!r} (valid suites: {valid})"
        ) from None


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"seeds must be comma separated integers, got {text!r}"
        ) from None


def _add_common(parser: argparse.ArgumentParser, *, seed: bool = True) -> None:
    parser.add_argument("--config", type=Path, help="`section.key = value` config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config key, repeatable",
    )
    if seed:
        parser.add_argument("--seed", type=int, help="seed of every random draw")


def build_parser() -> argparse.ArgumentParser:
    """Return the `vad` argument parser."""
    parser = argparse.ArgumentParser(
        prog="vad", description="Prediction-based video anomaly detection."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="write the synthetic benchmark")
    _add_common(synth)
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--videos", type=int, help="normal training videos")
    synth.add_argument("--test-videos", type=int, help="normal test videos")
    synth.add_argument("--anomalous-videos", type=int, help="anomalous test videos")
    synth.add_argument("--anomalies", type=_anomaly_kinds, help="comma separated kinds")
    synth.add_argument("--frames", type=int, help="frames per video")
    synth.add_argument("--frame-size", type=_frame_size, help="HxW")
    synth.add_argument("--channels", type=int, choices=(1, 3))
    synth.set_defaults(handler=cmd_synth)

    train_cmd = commands.add_parser("train", help="train the predictor")
    _add_common(train_cmd)
    train_cmd.add_argument("--data", type=Path, required=True)
    train_cmd.add_argument("--out", type=Path, required=True)
    train_cmd.add_argument("--preset", choices=("desk", "benchmark"), default="desk")
    train_cmd.add_argument("--no-bi", action="store_true", help="forward pass only")
    train_cmd.add_argument("--no-sho", action="store_true", help="plain decoder cells")
    train_cmd.add_argument("--no-att", action="store_true", help="no attention masks")
    train_cmd.add_argument("--epochs", type=int)
    train_cmd.add_argument("--batch-size", type=int)
    train_cmd.add_argument("--lr", type=float)
    train_cmd.add_argument("--resume", action="store_true", help="continue from last.ckpt")
    train_cmd.set_defaults(handler=cmd_train)

    eval_cmd = commands.add_parser("eval", help="score a labeled test split")
    _add_common(eval_cmd)
    eval_cmd.add_argument("--ckpt", type=Path, required=True)
    eval_cmd.add_argument("--data", type=Path, required=True)
    eval_cmd.add_argument("--out", type=Path, required=True)
    eval_cmd.add_argument(
        "--pooling", choices=[pooling.value for pooling in Pooling], default=Pooling.PER_VIDEO
    )
    eval_cmd.add_argument("--batch-size", type=int, default=16)
    eval_cmd.add_argument("--dump-error-maps", action="store_true")
    eval_cmd.set_defaults(handler=cmd_eval)

    verify = commands.add_parser("verify", help="run the oracle suites")
    verify.add_argument("--only", type=_suites, help="comma separated suites")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", type=Path, help="directory for the report and manifest")
    verify.add_argument(
        "--corrupt-gradient",
        action="store_true",
        help="perturb analytic gradients (negative control)",
    )
    verify.set_defaults(handler=cmd_verify)

    accept = commands.add_parser("accept", help="multi-seed synthetic benchmark run")
    _add_common(accept, seed=False)
    accept.add_argument("--out", type=Path, required=True)
    accept.add_argument("--seeds", type=_seeds, help="comma separated seeds")
    accept.add_argument("--epochs", type=int)
    accept.set_defaults(handler=cmd_accept)
    return parser


def resolve_sections(
    args: argparse.Namespace,
    flags: Sections | None = None,
    seeded: Sequence[str] = ("model", "train", "synth"),
) -> Sections:
    """Merge config file, `--set` overrides, command flags and `--seed`."""
    sections: Sections = load_config_file(args.config) if args.config else {}
    if args.overrides:
        sections = merge_configs(
            sections, parse_config_text("\n".join(args.overrides), source="--set")
        )
    if flags:
        sections = merge_configs(sections, flags)
    seed = getattr(args, "seed", None)
    if seed is not None and seeded:
        sections = merge_configs(
            sections, {section: {"seed": seed} for section in seeded}
        )
    return sections


def _flag_values(section: str, **values: Any) -> Sections:
    return {section: {key: value for key, value in values.items() if value is not None}}


def _manifest(
    command: str,
    started_at: datetime,
    seed: int,
    configs: dict[str, Any],
    inputs: Sequence[Path],
    outputs: Sequence[Path],
    root: Path,
) -> RunManifest:
    resolved = {
        f"{section}.{key}": format_value(value)
        for section, config in configs.items()
        for key, value in config.to_dict().items()
    }
    return RunManifest(
        command=command,
        config=resolved,
        seed=seed,
        inputs=[path.as_posix() for path in inputs],
        outputs=[path.as_posix() for path in outputs],
        started_at=started_at,
        finished_at=datetime.now(tz=UTC),
        checksums=checksums(outputs, root),
    )


def cmd_synth(args: argparse.Namespace) -> int:
    """Write the synthetic dataset."""
    started_at = datetime.now(tz=UTC)
    flags = _flag_values(
        "synth",
        videos=args.videos,
        test_videos=args.test_videos,
        anomalous_videos=args.anomalous_videos,
        anomaly_kinds=args.anomalies,
        frames_per_video=args.frames,
        frame_size=args.frame_size,
        channels=args.channels,
    )
    sections = resolve_sections(args, flags)
    config = build_config(SynthConfig, sections.get("synth", {}), "synth")
    with OutputLock(args.out):
        written = generate_synthetic(config, args.out)
        write_manifest(
            _manifest("synth", started_at, config.seed, {"synth": config}, [], written, args.out),
            args.out / MANIFEST_FILE,
        )
    _LOGGER.info("Wrote %s files to %s", len(written), args.out)
    return ExitCode.OK


def _model_config(args: argparse.Namespace, values: dict[str, Any]) -> ModelConfig:
    if args.preset == "benchmark":
        base = ModelConfig.benchmark_preset().to_dict()
        base.update(values)
        values = base
    return build_config(ModelConfig, values, "model")


def cmd_train(args: argparse.Namespace) -> int:
    """Train a model on the train split."""
    started_at = datetime.now(tz=UTC)
    flags = merge_configs(
        _flag_values(
            "model",
            bi=False if args.no_bi else None,
            sho=False if args.no_sho else None,
            att=False if args.no_att else None,
        ),
        _flag_values("train", max_epochs=args.epochs, batch_size=args.batch_size, lr=args.lr),
    )
    sections = resolve_sections(args, flags)
    records = load_dataset(args.data, Split.TRAIN)
    if not records:
        raise ConfigException(f"no training videos under {args.data / Split.TRAIN}")
    model_values = dict(sections.get("model", {}))
    if "in_channels" not in model_values:
        model_values["in_channels"] = frame_shape(records[0])[2]
    model_cfg = _model_config(args, model_values)
    loss_cfg = build_config(LossConfig, sections.get("loss", {}), "loss")
    train_cfg = build_config(TrainConfig, sections.get("train", {}), "train")

    seed_everything(train_cfg.seed)
    splits = split_train_val(records, train_cfg.val_ratio, train_cfg.seed)
    model = build_model(model_cfg)
    with OutputLock(args.out):
        result = train(model, splits, loss_cfg, train_cfg, out_dir=args.out, resume=args.resume)
        outputs = [*result.checkpoints, *(sidecar_path(path) for path in result.checkpoints)]
        write_manifest(
            _manifest(
                "train",
                started_at,
                train_cfg.seed,
                {"model": model_cfg, "loss": loss_cfg, "train": train_cfg},
                [args.data],
                [path for path in outputs if path.exists()],
                args.out,
            ),
            args.out / MANIFEST_FILE,
        )
    _LOGGER.info(
        "Best validation loss %.6f at epoch %s",
        result.report.best_val_loss,
        result.report.best_epoch,
    )
    return ExitCode.OK


def _error_map_writer(root: Path, written: list[Path]) -> Callable[[str, int, np.ndarray], None]:
    def write(video_id: str, frame: int, error: np.ndarray) -> None:
        directory = root / ERROR_MAP_DIR / video_id
        directory.mkdir(parents=True, exist_ok=True)
        pixels = np.clip(np.rint(error / 2.0 * PIXEL_MAX), 0, PIXEL_MAX).astype(np.uint8)
        path = directory / FRAME_NAME_FMT.format(frame)
        Image.fromarray(pixels[..., 0] if pixels.shape[-1] == 1 else pixels).save(path)
        written.append(path)

    return write


def cmd_eval(args: argparse.Namespace) -> int:
    """Score the test split with a checkpoint."""
    started_at = datetime.now(tz=UTC)
    sections = resolve_sections(args, seeded=())
    expected = None
    if "model" in sections:
        recorded = read_checkpoint_config(args.ckpt).to_dict()
        recorded.update(sections["model"])
        expected = build_config(ModelConfig, recorded, "model")
    model, payload = load_checkpoint(args.ckpt, expected)
    config = model.config
    records = load_dataset(args.data, Split.TEST)
    if not records:
        raise ConfigException(f"no test videos under {args.data / Split.TEST}")
    height, width, channels = frame_shape(records[0])
    trained = tuple(payload.get("native_frame_size") or config.frame_size)
    if (height, width) != trained or channels != config.in_channels:
        raise ConfigException(
            f"test frames are {height}x{width} with {channels} channels, the checkpoint "
            f"was trained on {trained[0]}x{trained[1]} with {config.in_channels}"
        )
    written: list[Path] = []
    with OutputLock(args.out):
        evaluation = evaluate_dataset(
            model,
            records,
            config,
            pooling=args.pooling,
            batch_size=args.batch_size,
            error_map_sink=_error_map_writer(args.out, written) if args.dump_error_maps else None,
        )
        write_text_atomic(args.out / SCORE_FILE, evaluation.to_csv())
        write_text_atomic(args.out / SUMMARY_FILE, evaluation.summary())
        outputs = [args.out / SCORE_FILE, args.out / SUMMARY_FILE, *written]
        write_manifest(
            _manifest(
                "eval",
                started_at,
                config.seed,
                {"model": config},
                [args.ckpt, args.data],
                outputs,
                args.out,
            ),
            args.out / MANIFEST_FILE,
        )
    sys.stdout.write(evaluation.summary())
    return ExitCode.OK


def cmd_verify(args: argparse.Namespace) -> int:
    """Run the oracle suites; exit 1 naming every failed property."""
    started_at = datetime.now(tz=UTC)
    results = run_suites(args.only, seed=args.seed, corrupt_gradient=args.corrupt_gradient)
    report = "".join(result.describe() + "\n" for result in results)
    sys.stdout.write(report)
    if args.out is not None:
        with OutputLock(args.out):
            write_text_atomic(args.out / SUMMARY_FILE, report)
            write_manifest(
                _manifest(
                    "verify", started_at, args.seed, {}, [], [args.out / SUMMARY_FILE], args.out
                ),
                args.out / MANIFEST_FILE,
            )
    ensure_passed(results)
    return ExitCode.OK


def cmd_accept(args: argparse.Namespace) -> int:
    """Run the seeds of the synthetic benchmark; exit 1 naming every missed bar."""
    started_at = datetime.now(tz=UTC)
    flags = merge_configs(
        _flag_values("accept", seeds=args.seeds), _flag_values("train", max_epochs=args.epochs)
    )
    sections = resolve_sections(args, flags, seeded=())
    accept_cfg = build_config(AcceptanceConfig, sections.get("accept", {}), "accept")
    synth_cfg = build_config(SynthConfig, sections.get("synth", {}), "synth")
    model_cfg = build_config(ModelConfig, sections.get("model", {}), "model")
    loss_cfg = build_config(LossConfig, sections.get("loss", {}), "loss")
    train_cfg = build_config(TrainConfig, sections.get("train", {}), "train")
    with OutputLock(args.out):
        report = run_acceptance(args.out, accept_cfg, synth_cfg, model_cfg, loss_cfg, train_cfg)
        write_manifest(
            _manifest(
                "accept",
                started_at,
                accept_cfg.seeds[0],
                {
                    "accept": accept_cfg,
                    "synth": synth_cfg,
                    "model": model_cfg,
                    "loss": loss_cfg,
                    "train": train_cfg,
                },
                [],
                [args.out / ACCEPTANCE_FILE, args.out / SUMMARY_FILE],
                args.out,
            ),
            args.out / MANIFEST_FILE,
        )
    sys.stdout.write(report.describe())
    ensure_accepted(report)
    return ExitCode.OK


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line interface and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.handler(args))
    except (ConfigException, CheckpointMismatchException) as err:
        _LOGGER.error("%s", err)
        return ExitCode.USAGE
    except (VadException, OSError) as err:
        _LOGGER.error("%s", err)
        return ExitCode.FAILURE


if __name__ == "__main__":
    sys.exit(main())
