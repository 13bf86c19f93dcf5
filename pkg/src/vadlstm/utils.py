"""Utils for config files, checksums, manifests and output locking."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
from collections.abc import Iterable, Mapping
from dataclasses import fields
from enum import Enum
from pathlib import Path
from types import TracebackType
from typing import Any, TypeVar

import numpy as np
import torch
from mashumaro import DataClassDictMixin
from mashumaro.exceptions import ExtraKeysError, InvalidFieldValue, MissingField

from .const import LOCK_FILE
from .exceptions import ConfigException, OutputLockedException
from .model import (
    AcceptanceConfig,
    LossConfig,
    ModelConfig,
    RunManifest,
    SynthConfig,
    TrainConfig,
)

_LOGGER = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound=DataClassDictMixin)

SECTIONS: dict[str, type[DataClassDictMixin]] = {
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
    "accept": AcceptanceConfig,
}


def _parse_scalar(token: str) -> Any:
    lowered = token.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered == "none":
        return None
    for kind in (int, float):
        try:
            return kind(token)
        except ValueError:
            pass
    return token


def parse_value(text: str) -> Any:
    """Parse a config value; a comma makes a tuple (`32,` is a 1-tuple)."""
    text = text.strip()
    if "," in text:
        return tuple(_parse_scalar(part.strip()) for part in text.split(",") if part.strip())
    return _parse_scalar(text)


def format_value(value: Any) -> str:
    """Format a config value so that parse_value reads it back."""
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, list | tuple):
        parts = [format_value(item) for item in value]
        return ",".join(parts) + ("," if len(parts) == 1 else "")
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, Any]]:
    """Parse `section.key = value` lines into per-section dictionaries."""
    sections: dict[str, dict[str, Any]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigException(f"{source}:{number}: expected `key = value`, got {raw!r}")
        section, dot, name = key.strip().partition(".")
        if not dot or section not in SECTIONS:
            raise ConfigException(
                f"{source}:{number}: key {key.strip()!r} must start with one of "
                f"{', '.join(f'{name}.' for name in SECTIONS)}"
            )
        sections.setdefault(section, {})[name] = parse_value(value)
    return sections


def config_keys(cls: type[DataClassDictMixin]) -> dict[str, str]:
    """Map the file keys of a config class to its field names."""
    return {
        field.metadata.get("alias", field.name): field.name
        for field in fields(cls)  # type: ignore[arg-type]
    }


def build_config(
    cls: type[ConfigT], values: Mapping[str, Any], section: str = ""
) -> ConfigT:
    """Build a typed config from file keys, rejecting unknown ones."""
    keys = config_keys(cls)
    unknown = sorted(set(values) - set(keys))
    if unknown:
        prefix = f"{section}." if section else ""
        raise ConfigException(
            f"unknown config keys: {', '.join(prefix + key for key in unknown)}"
        )
    types = {field.name: str(field.type) for field in fields(cls)}  # type: ignore[arg-type]
    prepared = {
        key: (value,)
        if types[keys[key]].startswith("tuple[") and not isinstance(value, tuple | list)
        else value
        for key, value in values.items()
    }
    try:
        return cls.from_dict(prepared)
    except (ExtraKeysError, InvalidFieldValue, MissingField) as err:
        raise ConfigException(f"invalid {section or cls.__name__} config: {err}") from err


def merge_configs(
    base: Mapping[str, Mapping[str, Any]], overrides: Mapping[str, Mapping[str, Any]]
) -> dict[str, dict[str, Any]]:
    """Return base with every override key replacing its value."""
    merged = {section: dict(values) for section, values in base.items()}
    for section, values in overrides.items():
        merged.setdefault(section, {}).update(values)
    return merged


def format_config(**configs: DataClassDictMixin) -> str:
    """Format configs as `section.key = value` lines, sections in call order."""
    lines = []
    for section, config in configs.items():
        lines.extend(
            f"{section}.{key} = {format_value(value)}"
            for key, value in config.to_dict().items()
        )
    return "\n".join(lines) + "\n"


def load_config_file(path: Path) -> dict[str, dict[str, Any]]:
    """Read and parse a config file."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigException(f"cannot read config file {path}: {err}") from err
    return parse_config_text(text, source=str(path))


def config_differences(expected: DataClassDictMixin, actual: DataClassDictMixin) -> list[str]:
    """Return `key: expected != actual` for every differing field."""
    left, right = expected.to_dict(), actual.to_dict()
    return [
        f"{key}: {format_value(left.get(key))} != {format_value(right.get(key))}"
        for key in sorted(set(left) | set(right))
        if left.get(key) != right.get(key)
    ]


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch global generators."""
    random.seed(seed)
    np.random.seed(seed)  # noqa: NPY002
    torch.manual_seed(seed)


def file_sha256(path: Path) -> str:
    """Return the hex sha256 digest of a file."""
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def checksums(paths: Iterable[Path], root: Path) -> dict[str, str]:
    """Return sha256 digests keyed by POSIX path relative to root."""
    return {
        path.relative_to(root).as_posix(): file_sha256(path)
        for path in sorted(paths)
        if path.is_file()
    }


def write_text_atomic(path: Path, text: str) -> None:
    """Write a file through a temporary sibling and a rename."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_manifest(manifest: RunManifest, path: Path) -> None:
    """Write a run manifest atomically."""
    write_text_atomic(path, json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    _LOGGER.debug("Wrote manifest %s", path)


def read_manifest(path: Path) -> RunManifest:
    """Read a run manifest."""
    return RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))


class OutputLock:
    """Exclusive lock file guarding an output directory."""

    def __init__(self, directory: Path) -> None:
        """Initialize the lock for a directory."""
        self.path = directory / LOCK_FILE

    def __enter__(self) -> OutputLock:
        """Create the lock file or fail when it exists."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            handle = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as err:
            raise OutputLockedException(
                f"{self.path.parent} is locked by another command ({self.path})"
            ) from err
        with os.fdopen(handle, "w") as lock_file:
            lock_file.write(f"{os.getpid()}\n")
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc_value: BaseException | None,
        traceback: TracebackType | None,
    ) -> None:
        """Remove the lock file."""
        self.path.unlink(missing_ok=True)
