"""Generator and discriminator assembled from gated shift-convs and attention.

The generator is 13 gated temporal-shift convolution layers arranged as
down-sampling (5x5 head, two 4x4 stride-2 reductions), four 3x3 dilated
layers (dilation 2, 4, 8, 16) and an up-sampling tail (bilinear x2 before
the convolutions), with self-attention inserted after the first
down-sampling layer and again before the dilation block. There are no skip
connections between the down- and up-sampling stages. The raw output is a
tanh image mapped to [0, 1].

The discriminator is six 2D convolution layers over hard-shifted channels
with spectral weight normalisation, emitting a spatio-temporal patch score
map rather than a scalar.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .attention import SelfAttention2d
from .errors import ConfigError
from .temporal_shift import BIDIRECTIONAL, ONLINE, GatedTSMConv, ShiftSpec, temporal_shift

GENERATOR_LAYER_COUNT = 13
DISCRIMINATOR_LAYER_COUNT = 6


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 8
    out_channels: int = 3
    base_channels: int = 32
    shift: ShiftSpec = field(default_factory=lambda: ShiftSpec(0.25, ONLINE, learnable=True))
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.base_channels < 4:
            raise ConfigError("base_channels must be at least 4")


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 4  # RGB frame + mask
    base_channels: int = 32
    shift: ShiftSpec = field(default_factory=lambda: ShiftSpec(0.25, BIDIRECTIONAL))
    negative_slope: float = 0.2
    sn_input_size: int = 64  # canonical spatial size for the spectral power iteration


class SpectralConv2d(nn.Module):
    """Conv2d normalised by the spectral norm of the convolution operator.

    The largest singular value is tracked by power iteration on the actual
    conv/conv-transpose pair over a canonical input size, not on the
    flattened weight matrix; a matrix-level estimate undershoots the
    operator norm by up to the kernel size per layer, which lets a stack of
    Wasserstein-critic layers blow up. Buffers ``u``/``v`` update once per
    training-mode forward and are frozen in eval mode.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, input_hw=(64, 64)):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride, padding=padding)
        self.stride = stride
        self.padding = padding
        h, w = input_hw
        ho = (h + 2 * padding - kernel_size) // stride + 1
        wo = (w + 2 * padding - kernel_size) // stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"canonical input {input_hw} too small for this layer")
        u = torch.randn(1, out_channels, ho, wo)
        self.register_buffer("u", u / u.norm())
        self.register_buffer("v", torch.zeros(1, in_channels, h, w))
        with torch.no_grad():
            for _ in range(3):
                self._power_iteration()

    def _power_iteration(self) -> None:
        w = self.conv.weight
        v = F.conv_transpose2d(self.u, w, stride=self.stride, padding=self.padding)
        self.v.copy_(v / v.norm().clamp_min(1e-12))
        u = F.conv2d(self.v, w, stride=self.stride, padding=self.padding)
        self.u.copy_(u / u.norm().clamp_min(1e-12))

    def sigma(self) -> torch.Tensor:
        if self.training:
            with torch.no_grad():
                self._power_iteration()
        # clone so later in-place buffer updates cannot invalidate this graph
        u, v = self.u.clone(), self.v.clone()
        return (u * F.conv2d(v, self.conv.weight, stride=self.stride, padding=self.padding)).sum()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        sigma = self.sigma().clamp_min(1e-12)
        return F.conv2d(
            x, self.conv.weight / sigma, self.conv.bias, stride=self.stride, padding=self.padding
        )


class Generator(nn.Module):
    """Maps 8-channel conditioned frames to an inpainted RGB clip in [0, 1]."""

    downsample_factor = 4  # two stride-2 layers

    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config
        b = config.base_channels
        spec, slope = config.shift, config.negative_slope

        def layer(cin, cout, k=3, stride=1, dilation=1, activation="leaky_relu"):
            return GatedTSMConv(
                cin, cout, kernel_size=k, stride=stride, dilation=dilation,
                spec=spec, activation=activation, negative_slope=slope,
            )

        self.head = layer(config.in_channels, b, k=5)
        self.down1 = layer(b, 2 * b, k=4, stride=2)
        self.attn1 = SelfAttention2d(2 * b)
        self.mid1 = layer(2 * b, 2 * b)
        self.down2 = layer(2 * b, 4 * b, k=4, stride=2)
        self.mid2 = layer(4 * b, 4 * b)
        self.attn2 = SelfAttention2d(4 * b)
        self.dilated = nn.ModuleList([layer(4 * b, 4 * b, dilation=d) for d in (2, 4, 8, 16)])
        self.post = layer(4 * b, 4 * b)
        self.up1 = layer(4 * b, 2 * b)
        self.up2 = layer(2 * b, b)
        self.out = layer(b, config.out_channels, activation=None)

    def gated_layers(self) -> list[GatedTSMConv]:
        return [m for m in self.modules() if isinstance(m, GatedTSMConv)]

    def attention_layers(self) -> list[SelfAttention2d]:
        return [m for m in self.modules() if isinstance(m, SelfAttention2d)]

    @staticmethod
    def _upsample(f: torch.Tensor) -> torch.Tensor:
        n, t = f.shape[:2]
        flat = f.reshape(n * t, *f.shape[2:])
        flat = F.interpolate(flat, scale_factor=2, mode="bilinear", align_corners=False)
        return flat.reshape(n, t, *flat.shape[1:])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 5 or x.shape[2] != self.config.in_channels:
            raise ConfigError(
                f"generator expects (N, T, {self.config.in_channels}, H, W), got {tuple(x.shape)}"
            )
        if x.shape[3] % self.downsample_factor or x.shape[4] % self.downsample_factor:
            raise ConfigError(
                f"H and W must be divisible by {self.downsample_factor}, got {tuple(x.shape[3:])}"
            )
        f = self.head(x)
        f = self.down1(f)
        f = self.attn1(f)
        f = self.mid1(f)
        f = self.down2(f)
        f = self.mid2(f)
        f = self.attn2(f)
        for layer in self.dilated:
            f = layer(f)
        f = self.post(f)
        f = self.up1(self._upsample(f))
        f = self.up2(self._upsample(f))
        raw = self.out(f)
        return 0.5 * (torch.tanh(raw) + 1.0)


class Discriminator(nn.Module):
    """Six shift-conv layers with spectral normalisation; patch score output."""

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.config = config
        b = config.base_channels
        self.spec = config.shift
        s = config.sn_input_size
        self.convs = nn.ModuleList(
            [
                SpectralConv2d(config.in_channels, b, 4, stride=2, padding=1, input_hw=(s, s)),
                SpectralConv2d(b, 2 * b, 4, stride=2, padding=1, input_hw=(s // 2, s // 2)),
                SpectralConv2d(2 * b, 4 * b, 4, stride=2, padding=1, input_hw=(s // 4, s // 4)),
                SpectralConv2d(4 * b, 4 * b, 3, padding=1, input_hw=(s // 8, s // 8)),
                SpectralConv2d(4 * b, 4 * b, 3, padding=1, input_hw=(s // 8, s // 8)),
                SpectralConv2d(4 * b, 1, 3, padding=1, input_hw=(s // 8, s // 8)),
            ]
        )

    def forward(self, frames: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        if frames.dim() != 5 or masks.dim() != 5:
            raise ConfigError("discriminator expects (N, T, C, H, W) frames and masks")
        if frames.shape[2] + masks.shape[2] != self.config.in_channels:
            raise ConfigError(
                f"expected {self.config.in_channels} channels, got {frames.shape[2]} + {masks.shape[2]}"
            )
        if frames.shape[:2] != masks.shape[:2] or frames.shape[3:] != masks.shape[3:]:
            raise ConfigError("frames and masks must share N, T, H, W")
        f = torch.cat([frames, masks], dim=2)
        for i, conv in enumerate(self.convs):
            f = temporal_shift(f, self.spec)
            n, t = f.shape[:2]
            flat = conv(f.reshape(n * t, *f.shape[2:]))
            if i < len(self.convs) - 1:
                flat = F.leaky_relu(flat, self.config.negative_slope)
            f = flat.reshape(n, t, *flat.shape[1:])
        return f.squeeze(2)  # (N, T, h', w')


def composite_output(raw, input_frames, mask):
    """Blend: mask * raw + (1 - mask) * input_frames.

    ``raw`` and ``input_frames`` must have equal shapes; ``mask`` must
    broadcast against them (e.g. (N, T, 1, H, W) against (N, T, 3, H, W)).
    Outside the mask the result equals ``input_frames`` exactly.
    """
    if raw.shape != input_frames.shape:
        raise ValueError(f"shape mismatch: {tuple(raw.shape)} vs {tuple(input_frames.shape)}")
    return mask * raw + (1.0 - mask) * input_frames


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
