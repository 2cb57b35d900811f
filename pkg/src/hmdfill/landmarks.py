"""68-point facial landmarks: detection plugins, contour rasters, file I/O.

Landmarks follow the standard 68-point annotation (jaw 0-16, brows 17-26,
nose 27-35, eyes 36-47, mouth 48-67). Consecutive points of each drawing
group are connected with integer Bresenham segments; eye and mouth groups
close their loops. The resulting one-channel contour raster conditions the
generator on facial structure.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

import numpy as np

from .errors import NoFaceDetected
from . import synthetic

log = logging.getLogger(__name__)

N_POINTS = 68

# (name, index range, closed loop?) — the drawing scheme
LANDMARK_GROUPS = (
    ("jaw", synthetic.JAW, False),
    ("brow_l", synthetic.BROW_L, False),
    ("brow_r", synthetic.BROW_R, False),
    ("nose_bridge", synthetic.NOSE_BRIDGE, False),
    ("nose_base", synthetic.NOSE_BASE, False),
    ("eye_l", synthetic.EYE_L, True),
    ("eye_r", synthetic.EYE_R, True),
    ("mouth_outer", synthetic.MOUTH_OUTER, True),
    ("mouth_inner", synthetic.MOUTH_INNER, True),
)


def segment_count() -> int:
    """Number of segments the scheme draws (open: n-1, closed: n)."""
    return sum(len(idx) if closed else len(idx) - 1 for _, idx, closed in LANDMARK_GROUPS)


@dataclass
class LandmarkSet:
    """68 ordered (x, y) pixel coordinates with optional per-point confidence."""

    points: np.ndarray
    confidence: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64)
        if self.points.shape != (N_POINTS, 2):
            raise ValueError(f"expected {N_POINTS} (x, y) points, got shape {self.points.shape}")
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=np.float64)
            if self.confidence.shape != (N_POINTS,):
                raise ValueError("confidence must have one value per point")
            if self.confidence.min() < 0 or self.confidence.max() > 1:
                raise ValueError("confidence values must lie in [0, 1]")

    def in_frame(self, h: int, w: int) -> np.ndarray:
        """Boolean flags marking points inside the frame bounds."""
        x, y = self.points[:, 0], self.points[:, 1]
        return (x >= 0) & (x < w) & (y >= 0) & (y < h)


class SyntheticFaceProvider:
    """Ground-truth provider for parametric cartoon faces.

    Matches an incoming frame pixel-exactly against its own renders and
    returns the generating landmark set; anything else (including blank
    frames) raises NoFaceDetected.
    """

    thread_safe = True

    def __init__(self, params: synthetic.FaceParams, n_frames: int, h: int, w: int):
        self.h, self.w = h, w
        self._renders, marks = synthetic.render_clip(params, n_frames, h, w)
        self._marks = marks

    def detect(self, frame: np.ndarray) -> LandmarkSet:
        frame = np.asarray(frame)
        for t in range(self._renders.shape[0]):
            if frame.shape == self._renders[t].shape and np.array_equal(frame, self._renders[t]):
                return LandmarkSet(points=self._marks[t].copy())
        raise NoFaceDetected("frame does not contain a known synthetic face")


def detect_landmarks(frame: np.ndarray, provider) -> LandmarkSet:
    """Run a landmark provider on one frame.

    Providers declaring ``thread_safe = True`` are called directly; others
    are serialised behind a per-provider lock.
    """
    if getattr(provider, "thread_safe", False):
        return provider.detect(frame)
    lock = getattr(provider, "_serial_lock", None)
    if lock is None:
        lock = threading.Lock()
        try:
            provider._serial_lock = lock
        except AttributeError:
            pass
    with lock:
        return provider.detect(frame)


def landmarks_for_clip(frames: np.ndarray, provider) -> list[LandmarkSet | None]:
    """Detect landmarks per frame, reusing the last success when a frame fails.

    Frames before the first success yield None (rasterized as all-zero maps).
    """
    out: list[LandmarkSet | None] = []
    last = None
    for t in range(frames.shape[0]):
        try:
            last = detect_landmarks(frames[t], provider)
        except NoFaceDetected:
            if last is None:
                log.warning("no face detected in frame %d and no earlier landmarks to reuse", t)
            else:
                log.warning("no face detected in frame %d; reusing previous landmarks", t)
        out.append(last)
    return out


def bresenham(x0: int, y0: int, x1: int, y1: int):
    """Integer line pixels from (x0, y0) to (x1, y1), endpoints included."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    pixels = []
    x, y = x0, y0
    while True:
        pixels.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return pixels


def rasterize_contours(lm: LandmarkSet, h: int, w: int) -> np.ndarray:
    """Draw the landmark contours into an (H, W) float raster with values {0, 1}.

    Pixels outside the canvas are clipped away; a degenerate point set
    collapses to single pixels rather than erroring.
    """
    if h < 1 or w < 1:
        raise ValueError("raster size must be at least 1x1")
    raster = np.zeros((h, w), dtype=np.float32)
    pts = lm.points
    for _, idx, closed in LANDMARK_GROUPS:
        chain = list(idx) + ([idx[0]] if closed else [])
        for a, b in zip(chain[:-1], chain[1:]):
            for x, y in bresenham(int(pts[a, 0]), int(pts[a, 1]), int(pts[b, 0]), int(pts[b, 1])):
                if 0 <= x < w and 0 <= y < h:
                    raster[y, x] = 1.0
    return raster


def write_landmark_file(path, landmark_sets) -> None:
    """One line per frame: frame index then 68 space-separated "x,y" pairs."""
    with open(path, "w", encoding="ascii") as fh:
        for t, lm in enumerate(landmark_sets):
            pts = lm.points if isinstance(lm, LandmarkSet) else np.asarray(lm, dtype=np.int64)
            pairs = " ".join(f"{int(x)},{int(y)}" for x, y in pts)
            fh.write(f"{t} {pairs}\n")


def read_landmark_file(path) -> list[LandmarkSet]:
    """Parse the per-frame landmark format written by write_landmark_file."""
    sets: dict[int, LandmarkSet] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 1 + N_POINTS:
                raise ValueError(
                    f"{path}:{line_no}: expected frame index plus {N_POINTS} pairs, got {len(fields) - 1}"
                )
            idx = int(fields[0])
            points = np.array([[int(v) for v in pair.split(",")] for pair in fields[1:]], dtype=np.int64)
            sets[idx] = LandmarkSet(points=points)
    return [sets[i] for i in sorted(sets)]
