"""l1, SSIM and the mixed SSIM + Gaussian-filtered l1 objective.

Frames are ``... x C x H x W`` tensors; SSIM statistics are taken per channel
under a normalized Gaussian window at every fully-inside window position.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import torch
import torch.nn.functional as F

from .const import L1Filter
from .exceptions import ConfigException, ShapeException
from .model import LossConfig

if TYPE_CHECKING:
    from .network import PredictionSet

_LOGGER = logging.getLogger(__name__)


@dataclass
class WindowStats:
    """Local moments of a frame pair under the Gaussian window."""

    mu_p: torch.Tensor
    mu_p_hat: torch.Tensor
    var_p: torch.Tensor
    var_p_hat: torch.Tensor
    cov: torch.Tensor


def gaussian_window(
    size: int, sigma: float, dtype: torch.dtype = torch.float64
) -> torch.Tensor:
    """Return a size x size Gaussian kernel summing to 1."""
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    profile = torch.exp(-(coords**2) / (2 * sigma**2))
    profile = profile / profile.sum()
    return torch.outer(profile, profile).to(dtype)


def _check_shapes(p: torch.Tensor, p_hat: torch.Tensor) -> None:
    if p.shape != p_hat.shape:
        raise ShapeException(
            f"ground truth {tuple(p.shape)} and prediction {tuple(p_hat.shape)} differ"
        )


def _as_maps(frame: torch.Tensor) -> torch.Tensor:
    """Reshape ... x H x W to N x 1 x H x W."""
    return frame.reshape(-1, 1, *frame.shape[-2:])


def _blur(maps: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    return F.conv2d(maps, kernel.to(maps.dtype).to(maps.device)[None, None])


def l1_loss(p: torch.Tensor, p_hat: torch.Tensor) -> torch.Tensor:
    """Return the mean absolute difference over all pixels."""
    _check_shapes(p, p_hat)
    return (p - p_hat).abs().mean()


def window_stats(p: torch.Tensor, p_hat: torch.Tensor, cfg: LossConfig) -> WindowStats:
    """Return local means, variances and covariance at every window position."""
    _check_shapes(p, p_hat)
    height, width = p.shape[-2:]
    if min(height, width) < cfg.ssim_window:
        raise ConfigException(
            f"frame {height}x{width} is smaller than the SSIM window {cfg.ssim_window}"
        )
    kernel = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    maps, maps_hat = _as_maps(p), _as_maps(p_hat)
    mu_p = _blur(maps, kernel)
    mu_p_hat = _blur(maps_hat, kernel)
    return WindowStats(
        mu_p=mu_p,
        mu_p_hat=mu_p_hat,
        var_p=_blur(maps * maps, kernel) - mu_p**2,
        var_p_hat=_blur(maps_hat * maps_hat, kernel) - mu_p_hat**2,
        cov=_blur(maps * maps_hat, kernel) - mu_p * mu_p_hat,
    )


def ssim_map(p: torch.Tensor, p_hat: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Return the SSIM of every window."""
    stats = window_stats(p, p_hat, cfg)
    c1, c2 = cfg.c1, cfg.c2
    if c1 is None or c2 is None:
        raise ConfigException("SSIM stabilizers are unset")
    luminance = (2 * stats.mu_p * stats.mu_p_hat + c1) / (
        stats.mu_p**2 + stats.mu_p_hat**2 + c1
    )
    structure = (2 * stats.cov + c2) / (stats.var_p + stats.var_p_hat + c2)
    return luminance * structure


def ssim_value(p: torch.Tensor, p_hat: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Return the SSIM averaged over windows."""
    return ssim_map(p, p_hat, cfg).mean()


def ssim_loss(p: torch.Tensor, p_hat: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Return 1 - mean SSIM."""
    return 1.0 - ssim_value(p, p_hat, cfg)


def filtered_error(p: torch.Tensor, p_hat: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Return the absolute-error map under the fixed l1 filter (bias 0)."""
    _check_shapes(p, p_hat)
    error = _as_maps((p - p_hat).abs())
    if cfg.l1_filter is L1Filter.IDENTITY:
        return error
    radius = cfg.ssim_window // 2
    padded = F.pad(error, (radius, radius, radius, radius), mode="replicate")
    return _blur(padded, gaussian_window(cfg.ssim_window, cfg.ssim_sigma))


def mixed_loss(p: torch.Tensor, p_hat: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Return ssim_loss + lambda * mean(filtered absolute error)."""
    return ssim_loss(p, p_hat, cfg) + cfg.lambda_ * filtered_error(p, p_hat, cfg).mean()


def sequence_loss(
    predictions: PredictionSet, targets: torch.Tensor, cfg: LossConfig
) -> torch.Tensor:
    """Return the training objective of a prediction set.

    The fused predictions are averaged uniformly over all targets. With a
    backward pass both directions add their own term scaled by
    ``cfg.direction_weight``.
    """
    loss = mixed_loss(targets, predictions.fused, cfg)
    if predictions.backward is not None:
        loss = loss + cfg.direction_weight * (
            mixed_loss(targets, predictions.forward, cfg)
            + mixed_loss(targets, predictions.backward, cfg)
        )
    return loss
