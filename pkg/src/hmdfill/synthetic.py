"""Parametric cartoon faces with exactly known landmarks.

A face is an ellipse head with polygon eyes, brows, nose and mouth whose
geometry is computed from a small parameter set. Eye openness follows a
per-frame blink cycle and the mouth follows a talk cycle, so a rendered
clip carries deterministic motion with landmark and expression ground
truth. Rendering draws the very polygons the landmark model emits, which
keeps annotation and pixels in exact correspondence for tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw


@dataclass
class FaceParams:
    """Geometry, colour, and motion parameters of one cartoon face clip."""

    center: tuple[float, float] = (0.50, 0.53)  # fractions of (w, h)
    head_radii: tuple[float, float] = (0.36, 0.42)
    eye_offset: tuple[float, float] = (0.16, 0.10)  # from center, fractions of (w, h)
    eye_radii: tuple[float, float] = (0.085, 0.055)
    brow_raise: float = 0.075  # above eye center, fraction of h
    mouth_offset: float = 0.22  # below center, fraction of h
    mouth_radii: tuple[float, float] = (0.16, 0.055)
    smile: float = 0.5  # -1 frown .. +1 smile
    blink_rate: float = 0.11  # cycles per frame
    blink_phase: float = 0.0
    talk_rate: float = 0.07
    talk_phase: float = 0.25
    skin: tuple[int, int, int] = (224, 182, 150)
    eye_color: tuple[int, int, int] = (46, 46, 88)
    brow_color: tuple[int, int, int] = (70, 48, 34)
    mouth_color: tuple[int, int, int] = (168, 64, 70)
    background: tuple[int, int, int] = (96, 120, 150)

    def eye_openness(self, t: int) -> float:
        return 0.18 + 0.82 * (0.5 + 0.5 * math.cos(2 * math.pi * (t * self.blink_rate + self.blink_phase)))

    def mouth_openness(self, t: int) -> float:
        return 0.25 + 0.75 * (0.5 + 0.5 * math.sin(2 * math.pi * (t * self.talk_rate + self.talk_phase)))


def random_face_params(rng: np.random.Generator) -> FaceParams:
    """Draw a plausible random face, keeping every feature inside the frame."""
    return FaceParams(
        center=(0.5 + rng.uniform(-0.03, 0.03), 0.53 + rng.uniform(-0.03, 0.03)),
        head_radii=(0.36 + rng.uniform(-0.03, 0.03), 0.42 + rng.uniform(-0.03, 0.02)),
        eye_offset=(0.16 + rng.uniform(-0.02, 0.02), 0.10 + rng.uniform(-0.015, 0.015)),
        eye_radii=(0.085 + rng.uniform(-0.015, 0.015), 0.055 + rng.uniform(-0.01, 0.01)),
        brow_raise=0.075 + rng.uniform(-0.01, 0.02),
        mouth_offset=0.22 + rng.uniform(-0.02, 0.02),
        smile=float(rng.uniform(-1.0, 1.0)),
        blink_rate=float(rng.uniform(0.06, 0.16)),
        blink_phase=float(rng.uniform(0, 1)),
        talk_rate=float(rng.uniform(0.04, 0.12)),
        talk_phase=float(rng.uniform(0, 1)),
        skin=tuple(int(v) for v in rng.integers(170, 240, 3)),
        eye_color=tuple(int(v) for v in rng.integers(20, 90, 3)),
        brow_color=tuple(int(v) for v in rng.integers(30, 90, 3)),
        mouth_color=(int(rng.integers(140, 200)), int(rng.integers(40, 90)), int(rng.integers(50, 100))),
        background=tuple(int(v) for v in rng.integers(60, 200, 3)),
    )


def _ellipse_arc(cx, cy, rx, ry, angles):
    return [(cx + rx * math.cos(a), cy + ry * math.sin(a)) for a in angles]


def face_landmarks(params: FaceParams, t: int, h: int, w: int) -> np.ndarray:
    """The 68 landmark pixel coordinates of frame ``t``, shape (68, 2) int.

    Ordering follows the standard annotation scheme: jaw 0-16, brows 17-26,
    nose 27-35, eyes 36-47, mouth 48-67.
    """
    cx, cy = params.center[0] * w, params.center[1] * h
    rx, ry = params.head_radii[0] * w, params.head_radii[1] * h
    pts: list[tuple[float, float]] = []

    # jaw 0-16: lower half of the head ellipse, left temple to right temple
    pts += _ellipse_arc(cx, cy, rx, ry, [math.pi - i * math.pi / 16 for i in range(17)])

    # brows 17-21 (image left) and 22-26 (image right)
    ex, ey = params.eye_offset[0] * w, params.eye_offset[1] * h
    ew, eh = params.eye_radii[0] * w, params.eye_radii[1] * h
    by = cy - ey - params.brow_raise * h
    for side in (-1, +1):
        bx = cx + side * ex
        xs = np.linspace(bx - 1.2 * ew, bx + 1.2 * ew, 5)
        for i, x in enumerate(xs):
            arch = 0.35 * eh * (1 - ((i - 2) / 2.0) ** 2)
            pts.append((x, by - arch))

    # nose 27-30 bridge, 31-35 nostril row
    nose_base = cy + 0.06 * h
    for i in range(4):
        pts.append((cx, cy - ey + (nose_base - (cy - ey)) * (i / 3.0)))
    nw = 0.05 * w
    for x in np.linspace(cx - nw, cx + nw, 5):
        pts.append((x, nose_base + 0.02 * h))

    # eyes 36-41 (image left), 42-47 (image right); openness scales the lids
    o = params.eye_openness(t)
    for side in (-1, +1):
        eye_cx, eye_cy = cx + side * ex, cy - ey
        lid = max(eh * o, 0.5)
        pts += [
            (eye_cx - ew, eye_cy),
            (eye_cx - 0.5 * ew, eye_cy - lid),
            (eye_cx + 0.5 * ew, eye_cy - lid),
            (eye_cx + ew, eye_cy),
            (eye_cx + 0.5 * ew, eye_cy + lid),
            (eye_cx - 0.5 * ew, eye_cy + lid),
        ]

    # mouth: outer 48-59 then inner 60-67, with smile lifting the corners
    mcx, mcy = cx, cy + params.mouth_offset * h
    mw, mh = params.mouth_radii[0] * w, params.mouth_radii[1] * h
    open_frac = params.mouth_openness(t)
    smile_dy = -params.smile * 0.6 * mh

    def mouth_ring(width, height, n_top, n_bottom):
        ring = []
        for i in range(n_top + 2):  # corners included
            a = math.pi - i * math.pi / (n_top + 1)
            x, y = mcx + width * math.cos(a), mcy - height * math.sin(a)
            ring.append((x, y + smile_dy * (math.cos(a) ** 2)))
        for i in range(1, n_bottom + 1):
            a = i * math.pi / (n_bottom + 1)
            x, y = mcx + width * math.cos(a), mcy + height * math.sin(a)
            ring.append((x, y + smile_dy * (math.cos(a) ** 2)))
        return ring

    pts += mouth_ring(mw, mh, 5, 5)  # 48..59
    pts += mouth_ring(0.6 * mw, mh * 0.55 * open_frac, 3, 3)  # 60..67

    arr = np.rint(np.asarray(pts)).astype(np.int64)
    arr[:, 0] = np.clip(arr[:, 0], 0, w - 1)
    arr[:, 1] = np.clip(arr[:, 1], 0, h - 1)
    return arr


# landmark index ranges of the polygon groups used by rendering and rasterization
JAW = list(range(0, 17))
BROW_L = list(range(17, 22))
BROW_R = list(range(22, 27))
NOSE_BRIDGE = list(range(27, 31))
NOSE_BASE = list(range(31, 36))
EYE_L = list(range(36, 42))
EYE_R = list(range(42, 48))
MOUTH_OUTER = list(range(48, 60))
MOUTH_INNER = list(range(60, 68))


def render_face(params: FaceParams, t: int, h: int, w: int) -> np.ndarray:
    """Render frame ``t`` as an (H, W, 3) uint8 image."""
    img = Image.new("RGB", (w, h), params.background)
    draw = ImageDraw.Draw(img)
    cx, cy = params.center[0] * w, params.center[1] * h
    rx, ry = params.head_radii[0] * w, params.head_radii[1] * h
    draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=params.skin)

    lm = face_landmarks(params, t, h, w)
    xy = [tuple(p) for p in lm.tolist()]
    for brow in (BROW_L, BROW_R):
        draw.line([xy[i] for i in brow], fill=params.brow_color, width=1)
    draw.line([xy[i] for i in NOSE_BRIDGE], fill=params.brow_color, width=1)
    draw.line([xy[i] for i in NOSE_BASE], fill=params.brow_color, width=1)
    for eye in (EYE_L, EYE_R):
        draw.polygon([xy[i] for i in eye], fill=params.eye_color)
    draw.polygon([xy[i] for i in MOUTH_OUTER], fill=params.mouth_color)
    inner = [xy[i] for i in MOUTH_INNER]
    if len(set(inner)) >= 3:
        draw.polygon(inner, fill=(60, 20, 25))
    return np.asarray(img, dtype=np.uint8)


def render_clip(params: FaceParams, n_frames: int, h: int, w: int):
    """Render a clip and its landmarks: ((T, H, W, 3) uint8, list of (68, 2))."""
    frames = np.stack([render_face(params, t, h, w) for t in range(n_frames)])
    marks = [face_landmarks(params, t, h, w) for t in range(n_frames)]
    return frames, marks
