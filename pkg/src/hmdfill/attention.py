"""Spatial self-attention block for non-local feature aggregation.

Query/key/value maps are 1x1-kernel convolution projections of the input.
Scores S = Q . K^T are taken over flattened spatial positions of each
frame, normalised with a softmax over the key positions, and used to
linearly combine the value maps: Y_A = A . V. The block returns
x + gamma * Y_A with a learnable scalar gamma initialised to zero, so a
freshly built block is the identity. Frames attend only within
themselves; the temporal axis is folded into the batch.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NumericalError


class SelfAttention2d(nn.Module):
    """Per-frame self-attention over spatial positions of a (N, T, C, H, W) map.

    Q and K project to max(C // 8, 1) channels to bound the score matrix
    cost; V keeps all C channels so the attended output feeds straight back
    into the residual sum.
    """

    def __init__(self, channels: int, qk_channels: int | None = None):
        super().__init__()
        if channels < 1:
            raise ConfigError("channels must be positive")
        self.channels = channels
        qk = qk_channels if qk_channels is not None else max(channels // 8, 1)
        self.query_conv = nn.Conv2d(channels, qk, kernel_size=1)
        self.key_conv = nn.Conv2d(channels, qk, kernel_size=1)
        self.value_conv = nn.Conv2d(channels, channels, kernel_size=1)
        self.gamma = nn.Parameter(torch.zeros(1))

    def attention_maps(self, f: torch.Tensor):
        """Projections and normalised attention for a feature map.

        Returns (q, k, v, scores, attn, attended) with q/k shaped
        (B, P, C_qk), v/attended (B, P, C) and scores/attn (B, P, P)
        where B = N*T and P = H*W.
        """
        if f.dim() != 5:
            raise ValueError(f"expected (N, T, C, H, W), got shape {tuple(f.shape)}")
        N, T, C, H, W = f.shape
        if C != self.channels:
            raise ConfigError(f"attention block expects C={self.channels}, got C={C}")
        x = f.reshape(N * T, C, H, W)
        q = self.query_conv(x).flatten(2).transpose(1, 2)
        k = self.key_conv(x).flatten(2).transpose(1, 2)
        v = self.value_conv(x).flatten(2).transpose(1, 2)
        scores = torch.bmm(q, k.transpose(1, 2))
        if not torch.isfinite(scores).all():
            raise NumericalError(
                f"non-finite attention scores (max |input| {f.abs().max().item():.3e})"
            )
        attn = F.softmax(scores, dim=-1)
        attended = torch.bmm(attn, v)
        return q, k, v, scores, attn, attended

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        N, T, C, H, W = f.shape
        _, _, _, _, _, attended = self.attention_maps(f)
        y = attended.transpose(1, 2).reshape(N, T, C, H, W)
        return f + self.gamma * y


def attention_rollout_stats(attn: torch.Tensor, height: int, width: int) -> dict:
    """Entropy and peak-location summaries of attention maps for diagnostics.

    ``attn`` is (B, P, P) with rows summing to one, P = height * width.
    Returns per-query-position entropy maps (B, H, W) and the (row, col)
    peak key location per query position (B, H, W, 2).
    """
    if attn.dim() != 3 or attn.shape[1] != attn.shape[2]:
        raise ValueError(f"expected square attention maps (B, P, P), got {tuple(attn.shape)}")
    if attn.shape[1] != height * width:
        raise ValueError("height * width must equal the number of positions")
    a = attn.detach()
    entropy = -(a * torch.log(a.clamp_min(1e-12))).sum(dim=-1)
    peak = a.argmax(dim=-1)
    peak_rc = torch.stack([peak // width, peak % width], dim=-1)
    return {
        "entropy": entropy.reshape(-1, height, width),
        "peak": peak_rc.reshape(-1, height, width, 2),
    }
