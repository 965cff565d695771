"""Domain types for pixel-space video data and the basic masking operators.

All types are immutable after construction: array payloads are made
non-writeable so values can be shared freely across threads. Pixel data is
float32 in [0, 1]; masks are uint8 in {0, 1}.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyMaskError, ShapeError

PIXEL_CHANNELS = 3
SPATIAL_MULTIPLE = 8


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BBox:
    """Half-open pixel box: columns [x0, x1), rows [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ShapeError(
                f"degenerate bbox ({self.x0},{self.y0},{self.x1},{self.y1})"
            )

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.x0, other.x0),
            min(self.y0, other.y0),
            max(self.x1, other.x1),
            max(self.y1, other.y1),
        )

    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0


@dataclass(frozen=True)
class VideoClip:
    """A frame sequence in pixel space, shape (T, 3, H, W), values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 4 or d.shape[1] != PIXEL_CHANNELS:
            raise ShapeError(f"clip must be (T,3,H,W), got {d.shape}")
        t, _, h, w = d.shape
        if t < 1:
            raise ShapeError("clip needs at least one frame")
        if h % SPATIAL_MULTIPLE or w % SPATIAL_MULTIPLE:
            raise ShapeError(f"frame dims must be multiples of 8, got {h}x{w}")
        if not np.isfinite(d).all():
            raise ShapeError("clip contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ShapeError("clip values must lie in [0,1]")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class MaskSequence:
    """Per-frame binary masks, shape (T, H, W), values in {0, 1}."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3:
            raise ShapeError(f"mask must be (T,H,W), got {d.shape}")
        if d.dtype != np.uint8:
            if not np.isin(d, (0, 1)).all():
                raise ShapeError("mask values must be 0 or 1")
            d = d.astype(np.uint8)
        elif d.max(initial=0) > 1:
            raise ShapeError("mask values must be 0 or 1")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def matches(self, clip: VideoClip) -> bool:
        return (self.frames, self.height, self.width) == (
            clip.frames,
            clip.height,
            clip.width,
        )

    def frame_empty(self, t: int) -> bool:
        return not self.data[t].any()

    def all_empty(self) -> bool:
        return not self.data.any()


@dataclass(frozen=True)
class Keypoint:
    name: str
    x: float
    y: float
    visible: bool = True


# Joint roster of the toy skeleton: body joints plus one keypoint per hand.
SKELETON_JOINTS = (
    "head",
    "neck",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_hand",
    "r_hand",
    "pelvis",
    "l_knee",
    "r_knee",
    "l_foot",
    "r_foot",
)

SKELETON_BONES = (
    ("head", "neck"),
    ("neck", "l_shoulder"),
    ("neck", "r_shoulder"),
    ("l_shoulder", "l_elbow"),
    ("r_shoulder", "r_elbow"),
    ("l_elbow", "l_hand"),
    ("r_elbow", "r_hand"),
    ("neck", "pelvis"),
    ("pelvis", "l_knee"),
    ("pelvis", "r_knee"),
    ("l_knee", "l_foot"),
    ("r_knee", "r_foot"),
)

# One RGB color per bone so the rendered skeleton is unambiguous.
_BONE_COLORS = [
    (0.9, 0.2, 0.2),
    (0.9, 0.6, 0.2),
    (0.8, 0.8, 0.2),
    (0.4, 0.9, 0.2),
    (0.2, 0.9, 0.5),
    (0.2, 0.9, 0.9),
    (0.2, 0.5, 0.9),
    (0.3, 0.2, 0.9),
    (0.6, 0.2, 0.9),
    (0.9, 0.2, 0.8),
    (0.9, 0.2, 0.5),
    (0.7, 0.7, 0.7),
]


class PoseSequence:
    """Named 2D keypoints per frame with a lazily rendered skeleton clip.

    Keypoints must lie inside the frame unless flagged invisible. The render
    is a (T, 3, H, W) float image of colored bone segments, cached after the
    first call.
    """

    def __init__(self, frames: Sequence[Sequence[Keypoint]], height: int, width: int):
        self.height = int(height)
        self.width = int(width)
        self.keypoints: tuple[tuple[Keypoint, ...], ...] = tuple(
            tuple(kps) for kps in frames
        )
        if not self.keypoints:
            raise ShapeError("pose sequence needs at least one frame")
        for t, kps in enumerate(self.keypoints):
            for kp in kps:
                inside = 0 <= kp.x < self.width and 0 <= kp.y < self.height
                if kp.visible and not inside:
                    raise ShapeError(
                        f"visible keypoint {kp.name!r} out of bounds at frame {t}",
                        frame=t,
                    )
        self._render: Optional[np.ndarray] = None

    @property
    def frames(self) -> int:
        return len(self.keypoints)

    def render(self) -> np.ndarray:
        if self._render is None:
            out = np.zeros(
                (self.frames, PIXEL_CHANNELS, self.height, self.width), np.float32
            )
            for t, kps in enumerate(self.keypoints):
                by_name = {kp.name: kp for kp in kps}
                for bone_idx, (a, b) in enumerate(SKELETON_BONES):
                    ka, kb = by_name.get(a), by_name.get(b)
                    if ka is None or kb is None or not (ka.visible and kb.visible):
                        continue
                    color = _BONE_COLORS[bone_idx % len(_BONE_COLORS)]
                    _draw_segment(out[t], ka.x, ka.y, kb.x, kb.y, color)
            self._render = _freeze(out)
        return self._render


def _draw_segment(img: np.ndarray, x0: float, y0: float, x1: float, y1: float,
                  color: tuple[float, float, float], radius: float = 1.0) -> None:
    """Stamp a thick line segment onto a (3, H, W) image, in place."""
    h, w = img.shape[1:]
    n = max(2, int(np.hypot(x1 - x0, y1 - y0)) * 2 + 1)
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    r = int(np.ceil(radius))
    for cx, cy in zip(xs, ys):
        ix, iy = int(round(cx)), int(round(cy))
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                px, py = ix + dx, iy + dy
                if 0 <= px < w and 0 <= py < h and dx * dx + dy * dy <= radius * radius + 0.5:
                    img[0, py, px] = color[0]
                    img[1, py, px] = color[1]
                    img[2, py, px] = color[2]


@dataclass(frozen=True)
class ReferenceImage:
    """A subject crop, (3, h, w) in [0, 1], with an optional binary matte.

    The matte distinguishes genuinely black subject pixels from off-subject
    background (which is stored as zeros).
    """

    data: np.ndarray
    alpha: Optional[np.ndarray] = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3 or d.shape[0] != PIXEL_CHANNELS:
            raise ShapeError(f"reference must be (3,h,w), got {d.shape}")
        if d.shape[1] < 1 or d.shape[2] < 1:
            raise ShapeError("reference has zero spatial extent")
        if not np.isfinite(d).all() or d.min() < 0.0 or d.max() > 1.0:
            raise ShapeError("reference values must be finite in [0,1]")
        object.__setattr__(self, "data", _freeze(d))
        if self.alpha is not None:
            a = np.asarray(self.alpha)
            if a.shape != d.shape[1:]:
                raise ShapeError(
                    f"alpha shape {a.shape} does not match image {d.shape[1:]}"
                )
            object.__setattr__(self, "alpha", _freeze(a.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def make_agnostic(clip: VideoClip, mask: MaskSequence) -> VideoClip:
    """Zero out the masked subject region: output = clip where mask is 0."""
    if not mask.matches(clip):
        raise ShapeError(
            f"mask {mask.data.shape} does not match clip {clip.data.shape}"
        )
    keep = (mask.data == 0)[:, None, :, :]
    return VideoClip(np.where(keep, clip.data, np.float32(0.0)))


def extract_reference(clip: VideoClip, mask: MaskSequence, frame_index: int) -> ReferenceImage:
    """Cut the masked subject out of one frame, cropped to its bounding box.

    Off-mask pixels inside the crop are zeroed; the cropped mask is kept as
    the alpha matte.
    """
    if not mask.matches(clip):
        raise ShapeError(
            f"mask {mask.data.shape} does not match clip {clip.data.shape}"
        )
    if not 0 <= frame_index < clip.frames:
        raise ShapeError(
            f"frame_index {frame_index} outside [0,{clip.frames})", frame=frame_index
        )
    m = mask.data[frame_index]
    if not m.any():
        raise EmptyMaskError(f"empty subject frame {frame_index}", frame=frame_index)
    ys, xs = np.nonzero(m)
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    crop = clip.data[frame_index, :, y0:y1, x0:x1] * m[None, y0:y1, x0:x1]
    return ReferenceImage(crop, alpha=m[y0:y1, x0:x1])
