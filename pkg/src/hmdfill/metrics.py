"""Evaluation metrics (MSE, PSNR, SSIM, LPIPS, FID) and report rendering.

All metrics take (T, H, W, 3) float arrays in [0, 1] (single images work as
T=1). LPIPS and FID run over an injected feature extractor; with the
deterministic random-projection stub they are reproducible pseudo-metrics
for regression tracking, not perceptual claims, and reports always name
the extractor used. Metrics can be restricted to the occluded region:
pixel-exact for MSE/PSNR, mask-bounding-box crops for the windowed and
feature-based metrics.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

METRIC_COLUMNS = (("mse", "v"), ("psnr", "^"), ("ssim", "^"), ("lpips", "v"), ("fid", "v"))
_ARROWS = {"v": "↓", "^": "↑"}


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / mse), +inf when the images are identical."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / err)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean local SSIM over all valid 11x11 Gaussian windows, channels, frames."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[None, ..., None], b[None, ..., None]
    elif a.ndim == 3:
        a, b = a[None], b[None]
    t, h, w, c = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    values = []
    for ti in range(t):
        for ci in range(c):
            x = np.lib.stride_tricks.sliding_window_view(a[ti, :, :, ci], (SSIM_WINDOW, SSIM_WINDOW))
            y = np.lib.stride_tricks.sliding_window_view(b[ti, :, :, ci], (SSIM_WINDOW, SSIM_WINDOW))
            mu_x = np.tensordot(x, kernel, axes=([2, 3], [0, 1]))
            mu_y = np.tensordot(y, kernel, axes=([2, 3], [0, 1]))
            xx = np.tensordot(x * x, kernel, axes=([2, 3], [0, 1])) - mu_x**2
            yy = np.tensordot(y * y, kernel, axes=([2, 3], [0, 1])) - mu_y**2
            xy = np.tensordot(x * y, kernel, axes=([2, 3], [0, 1])) - mu_x * mu_y
            num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
            den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
            values.append(num / den)
    return float(np.mean(values))


def _frames_to_batch(frames: np.ndarray) -> torch.Tensor:
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim == 3:
        frames = frames[None]
    return torch.from_numpy(frames.transpose(0, 3, 1, 2))


def lpips(a: np.ndarray, b: np.ndarray, extractor) -> float:
    """Perceptual distance: squared diff of unit-normalised feature stacks.

    Per stage, features are L2-normalised along channels at every spatial
    position; squared differences are summed over channels, averaged over
    positions and frames, and accumulated across stages (unit linear
    weights). With the stub extractor this is a reproducible pseudo-LPIPS.
    """
    a, b = np.asarray(a), np.asarray(b)
    _check_pair(a, b)
    with torch.no_grad():
        fa = extractor(_frames_to_batch(a))
        fb = extractor(_frames_to_batch(b))
        total = 0.0
        for sa, sb in zip(fa, fb):
            na = sa / torch.sqrt((sa**2).sum(dim=1, keepdim=True) + 1e-10)
            nb = sb / torch.sqrt((sb**2).sum(dim=1, keepdim=True) + 1e-10)
            total += float(((na - nb) ** 2).sum(dim=1).mean())
    return total


def _fid_features(frames: np.ndarray, extractor) -> np.ndarray:
    with torch.no_grad():
        stages = extractor(_frames_to_batch(frames))
        pooled = stages[-1].mean(dim=(2, 3))
    return pooled.double().numpy()


def trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """trace((cov_a^1/2 cov_b cov_a^1/2)^1/2) via symmetric eigendecompositions.

    Tiny negative eigenvalues from round-off are clamped to zero.
    """
    wa, va = np.linalg.eigh(cov_a)
    sqrt_a = va @ np.diag(np.sqrt(np.clip(wa, 0, None))) @ va.T
    m = sqrt_a @ cov_b @ sqrt_a
    wm = np.linalg.eigvalsh((m + m.T) / 2.0)
    return float(np.sum(np.sqrt(np.clip(wm, 0, None))))


def fid(frames_a: np.ndarray, frames_b: np.ndarray, extractor) -> float:
    """Frechet distance between Gaussian fits of per-frame extractor features."""
    feat_a = _fid_features(frames_a, extractor)
    feat_b = _fid_features(frames_b, extractor)
    d = feat_a.shape[1]
    for name, feats in (("first", feat_a), ("second", feat_b)):
        if feats.shape[0] < d + 1:
            raise DataError(
                f"{name} frame set has {feats.shape[0]} frames; "
                f"FID needs at least d+1 = {d + 1} for a non-degenerate covariance"
            )
    mu_a, mu_b = feat_a.mean(axis=0), feat_b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(feat_a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(feat_b, rowvar=False))
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b))
    value -= 2.0 * trace_sqrt_product(cov_a, cov_b)
    return max(value, 0.0)


def _mask_bbox(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("mask selects no pixels")
    return ys.min(), ys.max() + 1, xs.min(), xs.max() + 1


def clip_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    extractor,
    mask: np.ndarray | None = None,
    region: str = "full",
) -> dict:
    """All five metrics for one clip pair.

    ``region='masked'`` scores only the occluded area: MSE/PSNR restricted
    to mask==1 pixels exactly, SSIM/LPIPS/FID computed on the mask's
    bounding-box crop.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_pair(pred, gt)
    if region not in ("full", "masked"):
        raise ValueError(f"region must be 'full' or 'masked', got {region!r}")
    if region == "masked":
        if mask is None:
            raise ValueError("masked-region scoring needs a mask")
        sel = np.asarray(mask, dtype=bool)
        err = float(np.mean((pred[:, sel] - gt[:, sel]) ** 2))
        y0, y1, x0, x1 = _mask_bbox(mask)
        pred_r, gt_r = pred[:, y0:y1, x0:x1], gt[:, y0:y1, x0:x1]
    else:
        err = mse(pred, gt)
        pred_r, gt_r = pred, gt
    return {
        "mse": err,
        "psnr": math.inf if err == 0.0 else 10.0 * math.log10(1.0 / err),
        "ssim": ssim(pred_r, gt_r),
        "lpips": lpips(pred_r, gt_r, extractor),
        "fid": fid(pred_r, gt_r, extractor),
    }


@dataclass
class MetricsReport:
    """Per-clip and averaged metric values for one model variant."""

    model: str
    mask_descriptor: str = "none"
    extractor: str = "random-projection"
    region: str = "full"
    per_clip: dict = field(default_factory=dict)

    def add_clip(self, clip_id: str, values: dict) -> None:
        expected = {name for name, _ in METRIC_COLUMNS}
        if set(values) != expected:
            raise ValueError(f"clip metrics must cover {sorted(expected)}")
        for name in ("mse", "fid", "lpips"):
            if values[name] < 0:
                raise ValueError(f"{name} must be >= 0, got {values[name]}")
        if not (-1.0 <= values["ssim"] <= 1.0 + 1e-9):
            raise ValueError(f"ssim out of range: {values['ssim']}")
        self.per_clip[str(clip_id)] = dict(values)

    def aggregate(self) -> dict:
        if not self.per_clip:
            return {}
        return {
            name: float(np.mean([v[name] for v in self.per_clip.values()]))
            for name, _ in METRIC_COLUMNS
        }

    def to_json(self) -> str:
        payload = {
            "model": self.model,
            "mask": self.mask_descriptor,
            "extractor": self.extractor,
            "region": self.region,
            "per_clip": self.per_clip,
            "aggregate": self.aggregate(),
        }
        return json.dumps(payload, indent=2, allow_nan=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.4f}"


def render_report(reports: list[MetricsReport] | MetricsReport) -> str:
    """Fixed-width table, one labelled row per model, arrows marking direction."""
    if isinstance(reports, MetricsReport):
        reports = [reports]
    headers = ["Model"] + [f"{name.upper()}{_ARROWS[d]}" for name, d in METRIC_COLUMNS]
    rows = []
    for rep in reports:
        agg = rep.aggregate()
        if agg:  # reports without clips contribute no row (header-only table)
            rows.append([rep.model] + [_fmt(agg[name]) for name, _ in METRIC_COLUMNS])
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))).rstrip())
    return "\n".join(lines) + "\n"


def save_plots(reports, directory) -> list[Path]:
    """One bar plot per metric comparing the reports' aggregates."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(reports, MetricsReport):
        reports = [reports]
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    labels = [r.model for r in reports]
    for name, direction in METRIC_COLUMNS:
        values = [r.aggregate().get(name, float("nan")) for r in reports]
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.bar(labels, values, color="#4878cf")
        ax.set_title(f"{name.upper()} ({'lower' if direction == 'v' else 'higher'} is better)")
        ax.tick_params(axis="x", rotation=20)
        fig.tight_layout()
        path = directory / f"metric_{name}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
