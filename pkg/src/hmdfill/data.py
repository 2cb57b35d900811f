"""Video ingestion, headset-mask simulation, and generator input assembly.

Clips live on disk as directories of lossless 8-bit PNG frames named
frame_%05d.png, converted to [0, 1] reals by dividing by 255 so file
round trips are bit-exact. A dataset is described by a JSON manifest
listing clip directories and their train/test split. The simulated
headset occlusion is a single rounded-rectangle band over the upper
face, identical across all frames of a clip.

Generator input stacks 8 channels per frame: masked RGB (3), the binary
mask (1), the landmark contour map (1), and the masked-region-only
reference image broadcast along time (3).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, DataError
from . import landmarks as lm_mod
from . import synthetic

FRAME_PATTERN = "frame_%05d.png"
LANDMARK_FILENAME = "landmarks.txt"
MANIFEST_FILENAME = "manifest.json"

# fixed per-frame channel layout of the generator input
CH_RGB = slice(0, 3)
CH_MASK = 3
CH_LANDMARKS = 4
CH_REFERENCE = slice(5, 8)
N_INPUT_CHANNELS = 8


@dataclass
class VideoClip:
    """A (T, H, W, 3) float32 frame sequence with values in [0, 1]."""

    frames: np.ndarray
    fps: float | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"clip must be (T, H, W, 3) with T >= 1, got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError("clip contains non-finite values")
        if self.frames.min() < 0 or self.frames.max() > 1:
            raise ValueError("clip values must lie in [0, 1]")

    @property
    def shape(self):
        return self.frames.shape

    @classmethod
    def from_uint8(cls, frames: np.ndarray, fps: float | None = None) -> "VideoClip":
        return cls(frames=np.asarray(frames, dtype=np.float32) / 255.0, fps=fps)

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.frames * 255.0).astype(np.uint8)


@dataclass
class MaskSequence:
    """Per-frame binary occlusion masks (T, H, W); 1 marks occluded pixels."""

    masks: np.ndarray

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.float32)
        if self.masks.ndim != 3 or self.masks.shape[0] < 1:
            raise ValueError(f"mask sequence must be (T, H, W), got {self.masks.shape}")
        values = np.unique(self.masks)
        if not np.all(np.isin(values, (0.0, 1.0))):
            raise ValueError("mask values must be 0 or 1")

    @classmethod
    def from_frame(cls, mask: np.ndarray, n_frames: int) -> "MaskSequence":
        mask = np.asarray(mask, dtype=np.float32)
        return cls(masks=np.repeat(mask[None], n_frames, axis=0))

    def is_static(self) -> bool:
        return bool(np.all(self.masks == self.masks[0]))


@dataclass(frozen=True)
class MaskGeometry:
    """Rounded-rectangle band over the upper face, in frame fractions."""

    top: float = 0.25
    bottom: float = 0.55
    left: float = 0.15
    right: float = 0.85
    corner_radius: float = 0.15  # fraction of the band height

    def __post_init__(self):
        if not (0.0 <= self.top <= self.bottom <= 1.0):
            raise ConfigError(f"rows [{self.top}, {self.bottom}] out of bounds")
        if not (0.0 <= self.left <= self.right <= 1.0):
            raise ConfigError(f"cols [{self.left}, {self.right}] out of bounds")
        if not (0.0 <= self.corner_radius <= 0.5):
            raise ConfigError("corner_radius must lie in [0, 0.5]")


def make_hmd_mask(h: int, w: int, geom: MaskGeometry = MaskGeometry()) -> np.ndarray:
    """Binary (H, W) mask of the simulated headset band."""
    if h < 1 or w < 1:
        raise ConfigError("mask size must be at least 1x1")
    y0, y1 = int(round(geom.top * h)), int(round(geom.bottom * h))
    x0, x1 = int(round(geom.left * w)), int(round(geom.right * w))
    mask = np.zeros((h, w), dtype=np.float32)
    if y1 <= y0 or x1 <= x0:
        return mask
    r = geom.corner_radius * (y1 - y0)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # distance to the band core (band shrunk by r); inside iff within r
    cx = np.clip(xs, x0 + r, x1 - 1 - r)
    cy = np.clip(ys, y0 + r, y1 - 1 - r)
    inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= r**2 + 1e-9
    inside &= (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)
    mask[inside] = 1.0
    return mask


def apply_mask(clip: VideoClip, mask: MaskSequence) -> VideoClip:
    """Zero out occluded pixels, leaving the rest untouched."""
    if mask.masks.shape != clip.frames.shape[:3]:
        raise ValueError(
            f"mask shape {mask.masks.shape} does not match clip {clip.frames.shape[:3]}"
        )
    return VideoClip(frames=clip.frames * (1.0 - mask.masks[..., None]), fps=clip.fps)


def prepare_reference(clip: VideoClip, mask: MaskSequence, index: int = 0) -> np.ndarray:
    """Masked-region-only reference image: clip[index] with outside-mask pixels zeroed."""
    if not (0 <= index < clip.frames.shape[0]):
        raise ValueError(f"reference index {index} out of range for T={clip.frames.shape[0]}")
    if mask.masks.shape != clip.frames.shape[:3]:
        raise ValueError("mask shape does not match clip")
    return clip.frames[index] * mask.masks[index][..., None]


def save_clip(clip: VideoClip, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(clip.to_uint8()):
        Image.fromarray(frame).save(directory / (FRAME_PATTERN % t))


def load_clip(directory) -> VideoClip:
    directory = Path(directory)
    paths = sorted(directory.glob("frame_*.png"))
    if not paths:
        raise DataError(f"no frame files in {directory}")
    frames = np.stack([np.asarray(Image.open(p).convert("RGB"), dtype=np.uint8) for p in paths])
    return VideoClip.from_uint8(frames)


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray((np.asarray(mask) * 255).astype(np.uint8), mode="L").save(path)


def load_mask(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
    return (arr >= 128).astype(np.float32)


@dataclass
class ClipManifest:
    """Dataset description: root directory plus per-clip dirs and splits."""

    root: Path
    clips: list[dict] = field(default_factory=list)

    def clip_dirs(self, split: str | None = None) -> list[Path]:
        return [self.root / c["dir"] for c in self.clips if split is None or c["split"] == split]

    def validate(self, clip_len: int) -> None:
        for c in self.clips:
            d = self.root / c["dir"]
            n = len(list(d.glob("frame_*.png"))) if d.is_dir() else 0
            if n < clip_len:
                raise DataError(f"clip {c['dir']} has {n} frames, fewer than clip length {clip_len}")
            if not (d / LANDMARK_FILENAME).exists():
                raise DataError(f"clip {c['dir']} is missing its landmark file")

    def save(self, path=None) -> Path:
        path = Path(path) if path else self.root / MANIFEST_FILENAME
        payload = {"clips": self.clips}
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="ascii")
        return path

    @classmethod
    def load(cls, path) -> "ClipManifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        try:
            payload = json.loads(path.read_text(encoding="ascii"))
            clips = payload["clips"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"malformed manifest {path}: {exc}") from exc
        return cls(root=path.parent, clips=clips)


def generate_synthetic_corpus(
    out_dir,
    n_clips: int = 8,
    n_frames: int = 16,
    height: int = 64,
    width: int = 64,
    seed: int = 0,
    test_fraction: float = 0.25,
) -> ClipManifest:
    """Write a deterministic cartoon-face corpus with landmark ground truth."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    clips = []
    n_test = int(round(n_clips * test_fraction))
    for i in range(n_clips):
        params = synthetic.random_face_params(rng)
        frames, marks = synthetic.render_clip(params, n_frames, height, width)
        clip_dir = out_dir / f"clip_{i:04d}"
        save_clip(VideoClip.from_uint8(frames), clip_dir)
        lm_mod.write_landmark_file(clip_dir / LANDMARK_FILENAME, marks)
        split = "test" if i >= n_clips - n_test else "train"
        clips.append({"dir": clip_dir.name, "split": split, "frames": n_frames})
    manifest = ClipManifest(root=out_dir, clips=clips)
    manifest.save()
    return manifest


def build_generator_input(
    gt: VideoClip,
    mask: MaskSequence,
    landmark_maps: np.ndarray,
    reference_index: int = 0,
) -> np.ndarray:
    """Stack the 8-channel per-frame conditioning, shape (T, 8, H, W)."""
    t, h, w, _ = gt.frames.shape
    if landmark_maps.shape != (t, h, w):
        raise ValueError(f"landmark maps must be (T, H, W), got {landmark_maps.shape}")
    masked = apply_mask(gt, mask).frames
    reference = prepare_reference(gt, mask, reference_index)
    out = np.empty((t, N_INPUT_CHANNELS, h, w), dtype=np.float32)
    out[:, CH_RGB] = masked.transpose(0, 3, 1, 2)
    out[:, CH_MASK] = mask.masks
    out[:, CH_LANDMARKS] = landmark_maps
    out[:, CH_REFERENCE] = reference.transpose(2, 0, 1)[None]
    return out


class BatchSampler:
    """Deterministic shuffled batches of (generator input, ground truth) windows.

    Each batch element is a random clip_len window of one training clip; the
    reference frame is always the clip's frame ``reference_index`` (outside
    any window bias, matching how a user would capture it once up front).
    Landmark maps come from the per-clip landmark files. With
    ``use_landmarks=False`` the landmark channel is zeroed, which is the
    no-landmarks ablation.
    """

    def __init__(
        self,
        manifest: ClipManifest,
        mask_frame: np.ndarray,
        clip_len: int,
        batch_size: int,
        seed: int = 0,
        split: str = "train",
        reference_index: int = 0,
        use_landmarks: bool = True,
    ):
        manifest.validate(clip_len)
        self.dirs = manifest.clip_dirs(split)
        if not self.dirs:
            raise DataError(f"manifest has no clips in split {split!r}")
        self.clip_len = clip_len
        self.batch_size = batch_size
        self.reference_index = reference_index
        self.use_landmarks = use_landmarks
        self.rng = np.random.default_rng(seed)
        self._clips: dict[Path, tuple[VideoClip, np.ndarray]] = {}
        self.mask_frame = np.asarray(mask_frame, dtype=np.float32)
        self._order: list[int] = []

    def _load(self, d: Path):
        if d not in self._clips:
            clip = load_clip(d)
            t, h, w, _ = clip.frames.shape
            if self.mask_frame.shape != (h, w):
                raise DataError(f"mask shape {self.mask_frame.shape} does not fit clip {d.name}")
            sets = lm_mod.read_landmark_file(d / LANDMARK_FILENAME)
            if len(sets) < t:
                raise DataError(f"clip {d.name} has {len(sets)} landmark lines for {t} frames")
            maps = np.stack([lm_mod.rasterize_contours(s, h, w) for s in sets[:t]])
            self._clips[d] = (clip, maps)
        return self._clips[d]

    def rng_state(self):
        """Serializable sampling state: RNG plus the unconsumed shuffle order."""
        return {"rng": self.rng.bit_generator.state, "order": list(self._order)}

    def set_rng_state(self, state) -> None:
        self.rng.bit_generator.state = state["rng"]
        self._order = list(state["order"])

    def next_batch(self):
        """Returns (input (N, T, 8, H, W), gt (N, T, 3, H, W)) torch tensors."""
        inputs, gts = [], []
        for _ in range(self.batch_size):
            if not self._order:
                self._order = list(self.rng.permutation(len(self.dirs)))
            d = self.dirs[self._order.pop(0)]
            clip, maps = self._load(d)
            t_total = clip.frames.shape[0]
            start = int(self.rng.integers(0, t_total - self.clip_len + 1))
            window = VideoClip(frames=clip.frames[start : start + self.clip_len])
            mask = MaskSequence.from_frame(self.mask_frame, self.clip_len)
            lmaps = maps[start : start + self.clip_len]
            if not self.use_landmarks:
                lmaps = np.zeros_like(lmaps)
            full_mask = MaskSequence.from_frame(self.mask_frame, t_total)
            ref = prepare_reference(clip, full_mask, self.reference_index)
            x = build_generator_input(window, mask, lmaps)
            x[:, CH_REFERENCE] = ref.transpose(2, 0, 1)[None]
            inputs.append(x)
            gts.append(window.frames.transpose(0, 3, 1, 2))
        return (
            torch.from_numpy(np.stack(inputs)),
            torch.from_numpy(np.stack(gts)),
        )
