"""Tests for vadlstm.

Run tests with `poetry run pytest`
and to update snapshots `poetry run pytest --snapshot-update`
"""

import torch

from vadlstm.model import ModelConfig


def random_clip(
    config: ModelConfig, batch: int = 1, length: int | None = None, seed: int = 0
) -> torch.Tensor:
    """Return a B x L x C x H x W clip with values in [-1, 1]."""
    generator = torch.Generator().manual_seed(seed)
    shape = (
        batch,
        length or config.input_length,
        config.in_channels,
        *config.frame_size,
    )
    return torch.rand(shape, generator=generator) * 2 - 1
