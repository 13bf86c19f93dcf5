"""Bi-directional ConvLSTM auto-encoder predicting frame t+n from frames up to t.

Each direction owns an auto-encoder. Encoder stage s runs
Conv(stride 2) -> BatchNorm -> LeakyReLU -> attention -> ConvLSTM, the decoder
mirrors it with (higher-order) ConvLSTM -> Deconv(stride 2) -> BatchNorm ->
LeakyReLU, and a Conv -> tanh head maps back to image space. Decoder stage s
reads the hidden state and the attention mask of encoder stage s at the same
timestep.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch
from torch import nn

from .attention import AttentionMask, TemporalAttention, apply_mask
from .cells import ConvLSTMCell
from .const import Direction
from .exceptions import ConfigException, ShapeException
from .model import FrameClip, ModelConfig

_LOGGER = logging.getLogger(__name__)


@dataclass
class EncoderTrace:
    """Encoder hidden states and masks, one B x T x C_s x h_s x w_s tensor per stage.

    Timesteps follow the processing order of the pass that produced the trace.
    """

    hidden: list[torch.Tensor]
    masks: list[AttentionMask] | None


@dataclass
class PredictionSet:
    """B x T x C x H x W predictions, position k targeting input frame k plus n."""

    forward: torch.Tensor
    backward: torch.Tensor | None
    fused: torch.Tensor


def _run_cell(
    cell: ConvLSTMCell, inputs: torch.Tensor, encoder_states: torch.Tensor | None
) -> torch.Tensor:
    """Unroll a cell over the T axis from a zero state."""
    state = cell.initial_state(inputs[:, 0])
    hidden = []
    for step in range(inputs.shape[1]):
        h_enc = None if encoder_states is None else encoder_states[:, step]
        state = cell(inputs[:, step], state, h_enc)
        hidden.append(state.hidden)
    return torch.stack(hidden, dim=1)


def _per_frame(module: nn.Module, sequence: torch.Tensor) -> torch.Tensor:
    """Apply a frame-wise module to a B x T x ... sequence."""
    return module(sequence.flatten(0, 1)).unflatten(0, sequence.shape[:2])


class EncoderStage(nn.Module):
    """Stride-2 convolution, attention and ConvLSTM."""

    def __init__(self, in_channels: int, channels: int, config: ModelConfig) -> None:
        """Initialize the stage."""
        super().__init__()
        self.downsample = nn.Sequential(
            nn.Conv2d(
                in_channels,
                channels,
                config.conv_kernel,
                stride=2,
                padding=config.conv_kernel // 2,
            ),
            nn.BatchNorm2d(channels),
            nn.LeakyReLU(config.leaky_slope),
        )
        self.attention = (
            TemporalAttention(
                channels, config.attention_channels, config.attention_kernel
            )
            if config.enable_att
            else None
        )
        self.cell = ConvLSTMCell(channels, channels, config.convlstm_kernel)

    def forward(
        self, sequence: torch.Tensor
    ) -> tuple[torch.Tensor, AttentionMask | None]:
        """Return the hidden states and the mask of every timestep."""
        features = _per_frame(self.downsample, sequence)
        mask = None
        if self.attention is not None:
            mask = self.attention(features)
            features = apply_mask(features, mask)
        return _run_cell(self.cell, features, None), mask


class DecoderStage(nn.Module):
    """(Higher-order) ConvLSTM followed by a stride-2 deconvolution."""

    def __init__(
        self, channels: int, out_channels: int, config: ModelConfig
    ) -> None:
        """Initialize the stage mirroring an encoder stage with `channels`."""
        super().__init__()
        self.cell = ConvLSTMCell(
            channels,
            channels,
            config.convlstm_kernel,
            encoder_channels=channels if config.enable_sho else 0,
        )
        self.upsample = nn.Sequential(
            nn.ConvTranspose2d(
                channels,
                out_channels,
                config.conv_kernel,
                stride=2,
                padding=config.conv_kernel // 2,
                output_padding=1,
            ),
            nn.BatchNorm2d(out_channels),
            nn.LeakyReLU(config.leaky_slope),
        )

    def forward(
        self,
        sequence: torch.Tensor,
        encoder_hidden: torch.Tensor,
        mask: AttentionMask | None,
    ) -> torch.Tensor:
        """Return the upsampled features of every timestep."""
        if mask is not None:
            sequence = apply_mask(sequence, mask)
        h_enc = encoder_hidden if self.cell.is_higher_order else None
        return _per_frame(self.upsample, _run_cell(self.cell, sequence, h_enc))


class ConvLSTMAutoEncoder(nn.Module):
    """One direction of the predictor."""

    def __init__(self, config: ModelConfig) -> None:
        """Initialize encoder, decoder and head."""
        super().__init__()
        channels = config.stage_channels
        inputs = (config.in_channels, *channels[:-1])
        self.encoder = nn.ModuleList(
            EncoderStage(source, target, config)
            for source, target in zip(inputs, channels, strict=True)
        )
        self.decoder = nn.ModuleList(
            DecoderStage(channels[stage], channels[max(stage - 1, 0)], config)
            for stage in reversed(range(len(channels)))
        )
        self.head = nn.Conv2d(
            channels[0],
            config.in_channels,
            config.conv_kernel,
            padding=config.conv_kernel // 2,
        )

    def encode(self, frames: torch.Tensor) -> EncoderTrace:
        """Run every encoder stage over a B x T x C x H x W sequence."""
        hidden: list[torch.Tensor] = []
        masks: list[AttentionMask] = []
        sequence = frames
        for stage in self.encoder:
            sequence, mask = stage(sequence)
            hidden.append(sequence)
            if mask is not None:
                masks.append(mask)
        return EncoderTrace(hidden=hidden, masks=masks or None)

    def decode(self, trace: EncoderTrace) -> torch.Tensor:
        """Return predictions in processing order."""
        sequence = trace.hidden[-1]
        stages = len(trace.hidden)
        for position, stage in enumerate(self.decoder):
            mirrored = stages - 1 - position
            mask = None if trace.masks is None else trace.masks[mirrored]
            sequence = stage(sequence, trace.hidden[mirrored], mask)
        return torch.tanh(_per_frame(self.head, sequence))

    def forward(self, frames: torch.Tensor) -> tuple[torch.Tensor, EncoderTrace]:
        """Predict frame t+n for every input frame t."""
        trace = self.encode(frames)
        return self.decode(trace), trace


class BidirectionalPredictor(nn.Module):
    """Forward and backward auto-encoders with a fusion head."""

    def __init__(self, config: ModelConfig) -> None:
        """Initialize the directions enabled by the configuration."""
        super().__init__()
        self.config = config
        self.forward_ae = ConvLSTMAutoEncoder(config)
        self.backward_ae = ConvLSTMAutoEncoder(config) if config.enable_bi else None
        self.fusion = (
            nn.Conv2d(
                2 * config.in_channels,
                config.in_channels,
                config.conv_kernel,
                padding=config.conv_kernel // 2,
            )
            if config.enable_bi
            else None
        )

    def forward(self, clip: FrameClip | torch.Tensor) -> PredictionSet:
        """Return the predictions of a clip."""
        return predict(self, clip)


def _init_parameters(model: nn.Module, generator: torch.Generator) -> None:
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, ConvLSTMCell):
                module.reset_parameters(generator)
            elif isinstance(module, nn.Conv2d | nn.ConvTranspose2d):
                bound = 1.0 / math.sqrt(module.weight[0].numel())
                module.weight.uniform_(-bound, bound, generator=generator)
                if module.bias is not None:
                    module.bias.uniform_(-bound, bound, generator=generator)
            elif isinstance(module, nn.BatchNorm2d):
                module.reset_parameters()


def build_model(config: ModelConfig) -> BidirectionalPredictor:
    """Build the predictor with parameters drawn from `config.seed`."""
    with torch.random.fork_rng(devices=[]):
        model = BidirectionalPredictor(config)
    _init_parameters(model, torch.Generator().manual_seed(config.seed))
    _LOGGER.debug(
        "Built model with %s parameters (bi=%s, sho=%s, att=%s)",
        count_parameters(model),
        config.enable_bi,
        config.enable_sho,
        config.enable_att,
    )
    return model


def count_parameters(model: nn.Module) -> int:
    """Return the number of trainable scalars."""
    return sum(parameter.numel() for parameter in model.parameters())


def as_batch(
    clip: FrameClip | torch.Tensor, config: ModelConfig, like: nn.Module
) -> torch.Tensor:
    """Return a B x T x C x H x W tensor on the model's device and dtype."""
    reference = next(like.parameters())
    frames = clip.to_tensor() if isinstance(clip, FrameClip) else clip
    if frames.dim() == 4:
        frames = frames.unsqueeze(0)
    if frames.dim() != 5:
        raise ShapeException(f"expected B x T x C x H x W frames, got {tuple(frames.shape)}")
    if frames.shape[1] != config.input_length:
        raise ShapeException(
            f"clip has {frames.shape[1]} frames, the model expects T={config.input_length}"
        )
    expected = (config.in_channels, *config.frame_size)
    if tuple(frames.shape[2:]) != expected:
        raise ShapeException(
            f"frames of shape {tuple(frames.shape[2:])} do not match the model {expected}"
        )
    return frames.to(device=reference.device, dtype=reference.dtype)


def forward_pass(
    model: BidirectionalPredictor,
    clip: FrameClip | torch.Tensor,
    direction: Direction | str,
) -> tuple[torch.Tensor, EncoderTrace]:
    """Run one direction; predictions come back sorted by ascending target index."""
    frames = as_batch(clip, model.config, model)
    if Direction(direction) is Direction.FORWARD:
        return model.forward_ae(frames)
    if model.backward_ae is None:
        raise ConfigException("model was built without the backward pass (bi disabled)")
    predictions, trace = model.backward_ae(frames.flip(1))
    return predictions.flip(1), trace


def predict(
    model: BidirectionalPredictor, clip: FrameClip | torch.Tensor
) -> PredictionSet:
    """Run both passes and fuse them; without bi-directionality fused is forward."""
    forward, _ = forward_pass(model, clip, Direction.FORWARD)
    if model.fusion is None:
        return PredictionSet(forward=forward, backward=None, fused=forward)
    backward, _ = forward_pass(model, clip, Direction.BACKWARD)
    fused = torch.tanh(_per_frame(model.fusion, torch.cat([forward, backward], dim=2)))
    return PredictionSet(forward=forward, backward=backward, fused=fused)
