"""ConvLSTM and spatial higher-order ConvLSTM cells.

Both cells share one recurrence over a channel-stacked input::

    C_bar = tanh(W_c * S + b_c)        i = sigmoid(W_i * S + b_i)
    f     = sigmoid(W_f * S + b_f)     o = sigmoid(W_o * S + b_o)
    C_t   = f . C_prev + i . C_bar     H_t = o . tanh(C_t)

with S = [x, H_prev] for the ConvLSTM and S = [x, H_prev, H_enc] for the
higher-order cell, where H_enc is the same-timestep hidden state of the
mirrored encoder layer. Convolutions use zero same-padding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import RangeException, ShapeException

_LOGGER = logging.getLogger(__name__)


@dataclass
class CellState:
    """Hidden and cell feature maps of one recurrent layer, B x C_h x h x w."""

    hidden: torch.Tensor
    cell: torch.Tensor


@dataclass
class CellGates:
    """Activated gates of one step."""

    candidate: torch.Tensor
    input_gate: torch.Tensor
    forget_gate: torch.Tensor
    output_gate: torch.Tensor


@dataclass
class CellParams:
    """Per-gate kernels (C_h x C_stack x k x k) and biases (C_h)."""

    w_c: torch.Tensor
    w_i: torch.Tensor
    w_f: torch.Tensor
    w_o: torch.Tensor
    b_c: torch.Tensor
    b_i: torch.Tensor
    b_f: torch.Tensor
    b_o: torch.Tensor

    def __post_init__(self) -> None:
        """Check that all kernels agree."""
        shapes = {tuple(kernel.shape) for kernel in self.kernels}
        if len(shapes) != 1:
            raise ShapeException(f"gate kernels differ in shape: {sorted(shapes)}")
        height, width = self.w_c.shape[-2:]
        if height != width or height % 2 == 0:
            raise ShapeException(f"kernel must be square and odd, got {height}x{width}")

    @classmethod
    def from_stacked(cls, weight: torch.Tensor, bias: torch.Tensor) -> CellParams:
        """Split a 4*C_h stacked kernel in (c, i, f, o) order."""
        w_c, w_i, w_f, w_o = weight.chunk(4, dim=0)
        b_c, b_i, b_f, b_o = bias.chunk(4, dim=0)
        return cls(w_c, w_i, w_f, w_o, b_c, b_i, b_f, b_o)

    @property
    def kernels(self) -> tuple[torch.Tensor, ...]:
        """Return the four gate kernels."""
        return (self.w_c, self.w_i, self.w_f, self.w_o)

    @property
    def hidden_channels(self) -> int:
        """Return C_h."""
        return int(self.w_c.shape[0])

    @property
    def stack_channels(self) -> int:
        """Return the channel count of the stacked input."""
        return int(self.w_c.shape[1])

    @property
    def kernel_size(self) -> int:
        """Return k."""
        return int(self.w_c.shape[-1])

    def stacked(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Return the kernels and biases concatenated in (c, i, f, o) order."""
        weight = torch.cat(self.kernels, dim=0)
        bias = torch.cat([self.b_c, self.b_i, self.b_f, self.b_o], dim=0)
        return weight, bias


def init_state(
    batch: int,
    channels: int,
    height: int,
    width: int,
    *,
    dtype: torch.dtype = torch.float32,
    device: torch.device | None = None,
) -> CellState:
    """Return an all-zero state."""
    dims = (batch, channels, height, width)
    if min(dims) <= 0:
        raise RangeException(f"state dimensions must be positive, got {dims}")
    return CellState(
        hidden=torch.zeros(dims, dtype=dtype, device=device),
        cell=torch.zeros(dims, dtype=dtype, device=device),
    )


def _check_operands(
    params: CellParams, prev: CellState, *operands: torch.Tensor
) -> torch.Tensor:
    if prev.hidden.shape != prev.cell.shape:
        raise ShapeException(
            f"hidden {tuple(prev.hidden.shape)} and cell {tuple(prev.cell.shape)} differ"
        )
    if prev.hidden.shape[1] != params.hidden_channels:
        raise ShapeException(
            f"state has {prev.hidden.shape[1]} channels, "
            f"parameters produce {params.hidden_channels}"
        )
    stack = (operands[0], prev.hidden, *operands[1:])
    for operand in stack[1:]:
        if operand.dim() != 4 or stack[0].dim() != 4:
            raise ShapeException("cell operands must be B x C x h x w tensors")
        if operand.shape[0] != stack[0].shape[0] or operand.shape[2:] != stack[0].shape[2:]:
            raise ShapeException(
                f"input {tuple(stack[0].shape)} does not match {tuple(operand.shape)}"
            )
    channels = sum(int(operand.shape[1]) for operand in stack)
    if channels != params.stack_channels:
        raise ShapeException(
            f"stacked input has {channels} channels "
            f"({' + '.join(str(op.shape[1]) for op in stack)}), "
            f"parameters expect {params.stack_channels}"
        )
    return torch.cat(stack, dim=1)


def _gates(stack: torch.Tensor, params: CellParams) -> CellGates:
    weight, bias = params.stacked()
    raw = F.conv2d(stack, weight, bias, padding=params.kernel_size // 2)
    candidate, input_gate, forget_gate, output_gate = raw.chunk(4, dim=1)
    return CellGates(
        candidate=torch.tanh(candidate),
        input_gate=torch.sigmoid(input_gate),
        forget_gate=torch.sigmoid(forget_gate),
        output_gate=torch.sigmoid(output_gate),
    )


def _recur(stack: torch.Tensor, prev: CellState, params: CellParams) -> CellState:
    gates = _gates(stack, params)
    cell = gates.forget_gate * prev.cell + gates.input_gate * gates.candidate
    return CellState(hidden=gates.output_gate * torch.tanh(cell), cell=cell)


def gate_activations(
    x: torch.Tensor,
    prev: CellState,
    params: CellParams,
    h_enc: torch.Tensor | None = None,
) -> CellGates:
    """Return the activated gates a step would use."""
    operands = (x,) if h_enc is None else (x, h_enc)
    return _gates(_check_operands(params, prev, *operands), params)


def conv_lstm_step(x: torch.Tensor, prev: CellState, params: CellParams) -> CellState:
    """Advance a ConvLSTM by one timestep."""
    return _recur(_check_operands(params, prev, x), prev, params)


def sho_conv_lstm_step(
    x: torch.Tensor, prev: CellState, h_enc: torch.Tensor, params: CellParams
) -> CellState:
    """Advance a spatial higher-order ConvLSTM by one timestep."""
    return _recur(_check_operands(params, prev, x, h_enc), prev, params)


class ConvLSTMCell(nn.Module):
    """A ConvLSTM layer; higher-order when `encoder_channels` > 0."""

    def __init__(
        self,
        input_channels: int,
        hidden_channels: int,
        kernel_size: int = 5,
        encoder_channels: int = 0,
    ) -> None:
        """Initialize the stacked gate kernels."""
        super().__init__()
        self.input_channels = input_channels
        self.hidden_channels = hidden_channels
        self.encoder_channels = encoder_channels
        self.kernel_size = kernel_size
        stack = input_channels + hidden_channels + encoder_channels
        self.weight = nn.Parameter(
            torch.empty(4 * hidden_channels, stack, kernel_size, kernel_size)
        )
        self.bias = nn.Parameter(torch.empty(4 * hidden_channels))
        self.reset_parameters()

    @property
    def is_higher_order(self) -> bool:
        """Return True when the gates also read the encoder state."""
        return self.encoder_channels > 0

    @property
    def params(self) -> CellParams:
        """Return the parameters split per gate."""
        return CellParams.from_stacked(self.weight, self.bias)

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        """Draw weights and biases uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
        fan_in = self.weight.shape[1] * self.kernel_size**2
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            self.weight.uniform_(-bound, bound, generator=generator)
            self.bias.uniform_(-bound, bound, generator=generator)

    def initial_state(self, x: torch.Tensor) -> CellState:
        """Return the zero state matching an input batch."""
        return init_state(
            x.shape[0],
            self.hidden_channels,
            x.shape[2],
            x.shape[3],
            dtype=x.dtype,
            device=x.device,
        )

    def forward(
        self, x: torch.Tensor, state: CellState, h_enc: torch.Tensor | None = None
    ) -> CellState:
        """Run one step."""
        if self.is_higher_order:
            if h_enc is None:
                raise ShapeException("higher-order cell requires the encoder state")
            return sho_conv_lstm_step(x, state, h_enc, self.params)
        if h_enc is not None:
            raise ShapeException("first-order cell accepts no encoder state")
        return conv_lstm_step(x, state, self.params)
