"""Temporal attention masks over encoder feature maps.

Weights come from the current and previous stage input only, never from a
recurrent state, so the masks of all timesteps are computed in one batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ShapeException

_LOGGER = logging.getLogger(__name__)


@dataclass
class AttentionParams:
    """Bottleneck kernels: W1 (C_mid x 2C x k x k) with bias, W2 (C x C_mid x k x k)."""

    w1: torch.Tensor
    b1: torch.Tensor
    w2: torch.Tensor


@dataclass
class AttentionMask:
    """Per feature map weights in [0, 1]."""

    values: torch.Tensor


def attention_weights(
    x_t: torch.Tensor, x_prev: torch.Tensor, params: AttentionParams
) -> torch.Tensor:
    """Return Z_t = W2 * tanh(W1 * [x_t, x_prev] + b1), same-padded."""
    if x_t.shape != x_prev.shape:
        raise ShapeException(
            f"current input {tuple(x_t.shape)} and previous input "
            f"{tuple(x_prev.shape)} differ"
        )
    if params.w2.shape[0] != x_t.shape[1] or params.w1.shape[1] != 2 * x_t.shape[1]:
        raise ShapeException(
            f"attention kernels {tuple(params.w1.shape)}/{tuple(params.w2.shape)} "
            f"do not fit {x_t.shape[1]} input channels"
        )
    hidden = torch.tanh(
        F.conv2d(
            torch.cat([x_t, x_prev], dim=1),
            params.w1,
            params.b1,
            padding=params.w1.shape[-1] // 2,
        )
    )
    return F.conv2d(hidden, params.w2, padding=params.w2.shape[-1] // 2)


def min_max_mask(z: torch.Tensor) -> AttentionMask:
    """Min-max normalize exp(Z) over the spatial grid of every feature map.

    Constant maps normalize to zeros.
    """
    flat = z.flatten(start_dim=-2)
    # exp(z - max) keeps the ratio and maps the maximum to exactly 1.
    scaled = torch.exp(flat - flat.amax(dim=-1, keepdim=True))
    lowest = scaled.amin(dim=-1, keepdim=True)
    spread = 1.0 - lowest
    degenerate = spread <= 0
    mask = (scaled - lowest) / torch.where(degenerate, torch.ones_like(spread), spread)
    mask = torch.where(degenerate, torch.zeros_like(mask), mask)
    return AttentionMask(values=mask.reshape(z.shape))


def apply_mask(x: torch.Tensor, mask: AttentionMask) -> torch.Tensor:
    """Return the Hadamard product of a feature map and its mask."""
    if x.shape != mask.values.shape:
        raise ShapeException(
            f"feature map {tuple(x.shape)} and mask {tuple(mask.values.shape)} differ"
        )
    return x * mask.values


class TemporalAttention(nn.Module):
    """Learns Z_t from consecutive inputs of one encoder stage."""

    def __init__(
        self, channels: int, hidden_channels: int | None = None, kernel_size: int = 3
    ) -> None:
        """Initialize the two bottleneck convolutions."""
        super().__init__()
        hidden_channels = hidden_channels or channels
        padding = kernel_size // 2
        self.encode = nn.Conv2d(2 * channels, hidden_channels, kernel_size, padding=padding)
        self.project = nn.Conv2d(
            hidden_channels, channels, kernel_size, padding=padding, bias=False
        )

    @property
    def params(self) -> AttentionParams:
        """Return the kernels as AttentionParams."""
        return AttentionParams(
            w1=self.encode.weight, b1=self.encode.bias, w2=self.project.weight
        )

    def forward(self, features: torch.Tensor) -> AttentionMask:
        """Return masks for a B x T x C x h x w sequence.

        The first timestep is paired with itself.
        """
        previous = torch.cat([features[:, :1], features[:, :-1]], dim=1)
        z = attention_weights(
            features.flatten(0, 1), previous.flatten(0, 1), self.params
        )
        return min_max_mask(z.unflatten(0, features.shape[:2]))
