"""Temporal shifting of video feature maps and the gated shift-conv layer.

A kernel-3 temporal convolution Y_i = w1*X_{i-1} + w2*X_i + w3*X_{i+1}
decomposes into two steps: displace the sequence by -1/0/+1 (zero padded),
then multiply-accumulate with the three taps. Shifting a fraction of the
channels of a feature map by +-1 frame before an ordinary 2D convolution
lets the convolution mix information across neighbouring frames at zero
extra cost. The online variant shifts only from past frames so outputs
never depend on the future.

Feature maps are tensors of shape (N, T, C, H, W).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

BIDIRECTIONAL = "bidirectional"
ONLINE = "online"


def shift_decompose_1d(x, w) -> np.ndarray:
    """Kernel-3 convolution of a 1-D sequence via shift then multiply-accumulate.

    ``x`` is any 1-D sequence, ``w`` a triple (w1, w2, w3). Boundaries are
    zero padded. Equivalent to direct 3-tap convolution.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"expected non-empty 1-D sequence, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input sequence contains non-finite values")
    w = tuple(float(v) for v in w)
    if len(w) != 3 or not all(np.isfinite(w)):
        raise ValueError(f"shift kernel must be 3 finite taps, got {w}")

    # shift step: displaced copies of x with zero vacancies
    x_past = np.zeros_like(x)
    x_past[1:] = x[:-1]  # X^{-1}_i = X_{i-1}
    x_same = x  # X^{0}
    x_future = np.zeros_like(x)
    x_future[:-1] = x[1:]  # X^{+1}_i = X_{i+1}
    # multiply-accumulate step
    return w[0] * x_past + w[1] * x_same + w[2] * x_future


@dataclass(frozen=True)
class ShiftSpec:
    """How many channels to displace and in which direction.

    ``shift_fraction`` is the total fraction of channels displaced; half of
    them per direction in bidirectional mode, all of them from the past in
    online mode. ``learnable`` asks GatedTSMConv to replace the hard shift
    with per-channel temporal kernels initialised to the hard-shift pattern.
    """

    shift_fraction: float = 0.25
    direction: str = BIDIRECTIONAL
    learnable: bool = False

    def __post_init__(self):
        if not (0.0 < self.shift_fraction <= 1.0):
            raise ConfigError(f"shift_fraction must be in (0, 1], got {self.shift_fraction}")
        if self.direction not in (BIDIRECTIONAL, ONLINE):
            raise ConfigError(f"direction must be '{BIDIRECTIONAL}' or '{ONLINE}'")

    def fold(self, channels: int) -> int:
        """Channels displaced per direction (k). 2k channels move in total."""
        k = int(round(channels * self.shift_fraction / 2.0))
        if self.direction == BIDIRECTIONAL and k > channels // 2:
            raise ConfigError(f"cannot shift {k} channels per direction with C={channels}")
        if self.direction == ONLINE and 2 * k > channels:
            raise ConfigError(f"cannot shift {2 * k} past channels with C={channels}")
        return k


def _check_feature_map(f: torch.Tensor) -> None:
    if f.dim() != 5:
        raise ValueError(f"feature map must be (N, T, C, H, W), got shape {tuple(f.shape)}")
    if f.shape[1] < 1 or f.shape[2] < 1:
        raise ValueError(f"feature map needs T >= 1 and C >= 1, got shape {tuple(f.shape)}")


def temporal_shift(f: torch.Tensor, spec: ShiftSpec) -> torch.Tensor:
    """Hard channel shift of a (N, T, C, H, W) feature map.

    Bidirectional: channels [0, k) take their value from frame t-1 and
    channels [k, 2k) from frame t+1. Online: channels [0, 2k) take frame
    t-1 and nothing is read from the future. Vacated boundary positions
    are zero. The ``learnable`` flag is ignored here; it only changes how
    GatedTSMConv parameterises the shift.
    """
    _check_feature_map(f)
    k = spec.fold(f.shape[2])
    if k == 0:
        return f
    out = torch.zeros_like(f)
    if spec.direction == BIDIRECTIONAL:
        out[:, 1:, :k] = f[:, :-1, :k]
        out[:, :-1, k : 2 * k] = f[:, 1:, k : 2 * k]
    else:
        out[:, 1:, : 2 * k] = f[:, :-1, : 2 * k]
    out[:, :, 2 * k :] = f[:, :, 2 * k :]
    return out


class LearnableShift(nn.Module):
    """Per-channel temporal kernels over the shifted channel block.

    The first 2k channels get a depthwise temporal convolution (3 taps over
    {t-1, t, t+1} bidirectional, 2 taps over {t-1, t} online) initialised to
    reproduce the hard shift exactly; remaining channels pass through.
    """

    def __init__(self, channels: int, spec: ShiftSpec):
        super().__init__()
        self.spec = spec
        self.fold = spec.fold(channels)
        n = 2 * self.fold
        taps = 3 if spec.direction == BIDIRECTIONAL else 2
        weight = torch.zeros(n, 1, taps)
        if n > 0:
            if spec.direction == BIDIRECTIONAL:
                weight[: self.fold, 0, 0] = 1.0  # from t-1
                weight[self.fold :, 0, 2] = 1.0  # from t+1
            else:
                weight[:, 0, 0] = 1.0  # from t-1
        self.weight = nn.Parameter(weight)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        _check_feature_map(f)
        n = 2 * self.fold
        if n == 0:
            return f
        N, T, C, H, W = f.shape
        block = f[:, :, :n]  # (N, T, n, H, W)
        seq = block.permute(0, 3, 4, 2, 1).reshape(N * H * W, n, T)
        if self.spec.direction == BIDIRECTIONAL:
            seq = F.conv1d(F.pad(seq, (1, 1)), self.weight, groups=n)
        else:
            seq = F.conv1d(F.pad(seq, (1, 0)), self.weight, groups=n)
        block = seq.reshape(N, H, W, n, T).permute(0, 4, 3, 1, 2)
        return torch.cat([block, f[:, :, n:]], dim=2)


class GatedTSMConv(nn.Module):
    """Gated 2D convolution over temporally shifted channels.

    output = act(feature_conv(shift(f))) * sigmoid(gate_conv(shift(f)))

    Spatial size follows stride/dilation with symmetric padding; gate
    values lie in (0, 1). ``activation=None`` leaves the feature path
    linear (used by output layers that apply their own nonlinearity).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        dilation: int = 1,
        spec: ShiftSpec = ShiftSpec(),
        activation: str | None = "leaky_relu",
        negative_slope: float = 0.2,
    ):
        super().__init__()
        if in_channels < 1 or out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if activation not in (None, "leaky_relu"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        self.spec = spec
        self.activation = activation
        self.negative_slope = negative_slope
        self.shift = LearnableShift(in_channels, spec) if spec.learnable else None
        padding = dilation * (kernel_size - 1) // 2
        self.feature_conv = nn.Conv2d(
            in_channels, out_channels, kernel_size, stride=stride, padding=padding, dilation=dilation
        )
        self.gate_conv = nn.Conv2d(
            in_channels, out_channels, kernel_size, stride=stride, padding=padding, dilation=dilation
        )

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        _check_feature_map(f)
        if f.shape[2] != self.in_channels:
            raise ConfigError(f"layer expects C={self.in_channels}, got C={f.shape[2]}")
        shifted = self.shift(f) if self.shift is not None else temporal_shift(f, self.spec)
        N, T = shifted.shape[:2]
        flat = shifted.reshape(N * T, *shifted.shape[2:])
        feat = self.feature_conv(flat)
        if self.activation == "leaky_relu":
            feat = F.leaky_relu(feat, self.negative_slope)
        gate = torch.sigmoid(self.gate_conv(flat))
        out = feat * gate
        return out.reshape(N, T, *out.shape[1:])
