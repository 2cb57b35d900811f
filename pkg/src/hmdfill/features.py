"""Pluggable frame featurizers: perceptual feature extractors and expression scorers.

A feature extractor maps an RGB frame batch (B, 3, H, W) to an ordered list
of intermediate feature tensors; an expression scorer maps the same batch to
per-frame score vectors over the eight expression classes. Both are
deterministic and frozen during training. The random-projection stubs below
keep pretrained weights out of the test path while exercising every formula;
production configs may plug in real perceptual/emotion networks through the
same callables.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

EXPRESSION_CLASSES = (
    "surprise",
    "angry",
    "sad",
    "contempt",
    "disgust",
    "fear",
    "neutral",
    "happy",
)


def _check_frames(frames: torch.Tensor) -> None:
    if frames.dim() != 4 or frames.shape[1] != 3:
        raise ValueError(f"expected RGB frame batch (B, 3, H, W), got {tuple(frames.shape)}")


class IdentityExtractor(nn.Module):
    """Single-stage extractor returning the input itself."""

    def forward(self, frames: torch.Tensor) -> list[torch.Tensor]:
        _check_frames(frames)
        return [frames]


class RandomProjectionExtractor(nn.Module):
    """Deterministic stack of frozen random conv projections.

    Each stage halves the spatial size with a stride-2 3x3 convolution and a
    leaky rectification, mimicking the tapped stages of a pretrained
    perceptual network without its weights. Weights are drawn once from the
    given seed and never trained.
    """

    def __init__(self, stages: int = 2, base_channels: int = 8, seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        cin = 3
        for s in range(stages):
            cout = base_channels * (2**s)
            weight = torch.randn(cout, cin, 3, 3, generator=gen) / (3.0 * cin**0.5)
            bias = torch.randn(cout, generator=gen) * 0.1
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(weight)
                conv.bias.copy_(bias)
            convs.append(conv)
            cin = cout
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, frames: torch.Tensor) -> list[torch.Tensor]:
        _check_frames(frames)
        feats = []
        x = frames
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats


class RandomProjectionScorer(nn.Module):
    """Frozen random linear head over pooled pixels, softmaxed to 8 classes."""

    def __init__(self, seed: int = 4321, n_classes: int = len(EXPRESSION_CLASSES)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.weight = nn.Parameter(torch.randn(n_classes, 3 * 16, generator=gen), requires_grad=False)
        self.bias = nn.Parameter(torch.randn(n_classes, generator=gen) * 0.1, requires_grad=False)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        _check_frames(frames)
        # 4x4 average-pool grid keeps some spatial layout in the pooled code
        pooled = F.adaptive_avg_pool2d(frames, 4).flatten(1)
        return F.softmax(pooled @ self.weight.T + self.bias, dim=-1)


class ConstantScorer(nn.Module):
    """Returns the same fixed score vector for every frame (test fixture)."""

    def __init__(self, scores=None):
        super().__init__()
        if scores is None:
            scores = torch.full((len(EXPRESSION_CLASSES),), 1.0 / len(EXPRESSION_CLASSES))
        self.register_buffer("scores", torch.as_tensor(scores, dtype=torch.float32))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        _check_frames(frames)
        return self.scores.expand(frames.shape[0], -1).clone()


def make_extractor(kind: str, seed: int = 1234, stages: int = 2, base_channels: int = 8) -> nn.Module:
    """Extractor factory used by run configs ('identity' or 'random-projection')."""
    if kind == "identity":
        return IdentityExtractor()
    if kind == "random-projection":
        return RandomProjectionExtractor(stages=stages, base_channels=base_channels, seed=seed)
    raise ValueError(f"unknown extractor kind {kind!r}")


def make_scorer(kind: str, seed: int = 4321) -> nn.Module:
    """Scorer factory used by run configs ('constant' or 'random-projection')."""
    if kind == "constant":
        return ConstantScorer()
    if kind == "random-projection":
        return RandomProjectionScorer(seed=seed)
    raise ValueError(f"unknown scorer kind {kind!r}")
