"""Training losses and their weighted combination.

Five terms drive the adversarial training: an L1 reconstruction loss, a
perceptual loss over extractor feature maps, a style loss over their Gram
matrices, a Wasserstein adversarial loss in label-product form (labels -1
for real, +1 for fake), and an expression-recognition loss comparing
8-class emotion scores of ground truth and inpainted frames. The total is
the weighted sum

    total = w_adv * adv + w_fer * fer + w_style * style
            + w_vgg * vgg + w_recon * recon
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, NumericalError
from .features import EXPRESSION_CLASSES


@dataclass(frozen=True)
class LossWeights:
    """The five loss coefficients; defaults follow the training recipe."""

    adv: float = 1.0
    fer: float = 2.0
    style: float = 10.0
    vgg: float = 1.0
    recon: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            v = float(value)
            if not (v >= 0.0) or v != v or v == float("inf"):
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {value}")


def _as_frame_batch(clip: torch.Tensor) -> torch.Tensor:
    """Flatten (N, T, 3, H, W) or (T, 3, H, W) video tensors to (B, 3, H, W)."""
    if clip.dim() == 5:
        return clip.reshape(-1, *clip.shape[2:])
    if clip.dim() == 4:
        return clip
    raise ValueError(f"expected a frame batch or clip tensor, got shape {tuple(clip.shape)}")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def recon_loss(output: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    _check_same_shape(output, gt)
    return (output - gt).abs().mean()


def vgg_loss(output: torch.Tensor, gt: torch.Tensor, extractor) -> torch.Tensor:
    """Sum over tapped stages of the mean L1 distance between feature maps."""
    _check_same_shape(output, gt)
    fo = extractor(_as_frame_batch(output))
    fg = extractor(_as_frame_batch(gt))
    total = output.new_zeros(())
    for so, sg in zip(fo, fg):
        total = total + (so - sg).abs().mean()
    return total


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """Channel Gram matrix of (B, C, H, W) features, normalised by C*H*W."""
    b, c, h, w = features.shape
    flat = features.reshape(b, c, h * w)
    return torch.bmm(flat, flat.transpose(1, 2)) / (c * h * w)


def style_loss(output: torch.Tensor, gt: torch.Tensor, extractor) -> torch.Tensor:
    """Sum over stages of the mean L1 distance between Gram matrices."""
    _check_same_shape(output, gt)
    fo = extractor(_as_frame_batch(output))
    fg = extractor(_as_frame_batch(gt))
    total = output.new_zeros(())
    for so, sg in zip(fo, fg):
        total = total + (gram_matrix(so) - gram_matrix(sg)).abs().mean()
    return total


def adv_loss_d(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Discriminator objective: mean(fake) - mean(real) (labels +1 fake, -1 real)."""
    if not torch.isfinite(real_scores).all() or not torch.isfinite(fake_scores).all():
        raise NumericalError("non-finite discriminator scores")
    return fake_scores.mean() - real_scores.mean()


def adv_loss_g(fake_scores: torch.Tensor) -> torch.Tensor:
    """Generator objective: -mean(fake)."""
    if not torch.isfinite(fake_scores).all():
        raise NumericalError("non-finite discriminator scores")
    return -fake_scores.mean()


def fer_loss(inputs: torch.Tensor, outputs: torch.Tensor, scorer) -> torch.Tensor:
    """Mean absolute difference between 8-class expression scores.

    The batch dimension is the flattened set of frames; the difference is
    mean-reduced over the eight score components.
    """
    _check_same_shape(inputs, outputs)
    si = scorer(_as_frame_batch(inputs))
    so = scorer(_as_frame_batch(outputs))
    if si.dim() != 2 or si.shape[-1] != len(EXPRESSION_CLASSES):
        raise ConfigError(
            f"expression scorer must return (B, {len(EXPRESSION_CLASSES)}) scores, got {tuple(si.shape)}"
        )
    return (si - so).abs().mean()


def total_loss(
    adv: torch.Tensor,
    fer: torch.Tensor,
    style: torch.Tensor,
    vgg: torch.Tensor,
    recon: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted sum of the five loss components."""
    components = {"adv": adv, "fer": fer, "style": style, "vgg": vgg, "recon": recon}
    for name, value in components.items():
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if v != v or v in (float("inf"), float("-inf")):
            raise NumericalError(f"non-finite loss component {name}: {v}")
    return (
        weights.adv * adv
        + weights.fer * fer
        + weights.style * style
        + weights.vgg * vgg
        + weights.recon * recon
    )
