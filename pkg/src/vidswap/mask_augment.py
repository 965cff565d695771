"""Adaptive mask augmentation: bbox fill, subject-scaled grid blocks, extra shapes.

Block sizes are drawn in pixels (a training range or a fixed inference
value, both scaled linearly with frame height), and the block count spanning
the subject bbox falls out as ``bbox_extent // block``: big subjects get a
fine grid, small subjects a coarse one. The grid tiles the whole frame from
the origin; every block touching the mask is filled. Augmented masks are
always per-frame supersets of the input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .core import BBox, MaskSequence
from .errors import ConfigError, EmptyMaskError

Mode = Literal["train", "inference"]

SHAPE_KINDS = ("circle", "triangle", "rectangle")


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for mask augmentation.

    Pixel block bounds are defined at ``base_height`` and scaled
    proportionally to the actual frame height.
    """

    bbox_prob: float = 0.3
    train_block_min: int = 16
    train_block_max: int = 96
    infer_block: int = 32
    base_height: int = 256
    shape_prob: float = 0.3
    shape_count_min: int = 1
    shape_count_max: int = 3
    shape_scale_min: float = 0.1
    shape_scale_max: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.bbox_prob <= 1.0 and 0.0 <= self.shape_prob <= 1.0):
            raise ConfigError("probabilities must lie in [0,1]")
        if not (1 <= self.train_block_min <= self.train_block_max):
            raise ConfigError("need 1 <= train_block_min <= train_block_max")
        if self.infer_block < 1:
            raise ConfigError("infer_block must be >= 1")
        if not (1 <= self.shape_count_min <= self.shape_count_max <= 3):
            raise ConfigError("shape count bounds must satisfy 1 <= min <= max <= 3")
        if not (0.0 < self.shape_scale_min <= self.shape_scale_max):
            raise ConfigError("shape scale bounds must be positive and ordered")

    def scaled_blocks(self, frame_height: int) -> tuple[int, int, int]:
        """(train_min, train_max, infer) block sizes for a given frame height."""
        s = frame_height / self.base_height
        bmax = max(1, min(frame_height, round(self.train_block_max * s)))
        bmin = max(1, min(bmax, round(self.train_block_min * s)))
        binf = max(1, round(self.infer_block * s))
        return bmin, bmax, binf


@dataclass(frozen=True)
class GridSpec:
    """One grid choice: block size in pixels and block counts over the bbox."""

    block_h: int
    block_w: int
    blocks_h: int  # bbox_h // block_h; 0 means the bbox fits inside one block
    blocks_w: int


@dataclass
class ShapeParams:
    kind: str
    offset_y: int  # boundary anchor relative to the bbox center
    offset_x: int
    scale: float  # fraction of max(bbox_h, bbox_w)
    aspect: float
    angle: float

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "offset_y": self.offset_y,
            "offset_x": self.offset_x,
            "scale": self.scale,
            "aspect": self.aspect,
            "angle": self.angle,
        }


@dataclass
class AugmentTrace:
    """Record of every sampled augmentation parameter, for replay and audit."""

    mode: str
    branch: str  # "bbox" or "grid"
    block_h: Optional[int] = None
    block_w: Optional[int] = None
    shapes: list[ShapeParams] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "branch": self.branch,
            "block_h": self.block_h,
            "block_w": self.block_w,
            "shapes": [s.to_json() for s in self.shapes],
        }


def bbox_of(mask_frame: np.ndarray) -> Optional[BBox]:
    """Tightest box containing all positive pixels; None for an empty frame."""
    ys, xs = np.nonzero(mask_frame)
    if ys.size == 0:
        return None
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def union_bbox(mask: MaskSequence) -> Optional[BBox]:
    box = None
    for t in range(mask.frames):
        b = bbox_of(mask.data[t])
        if b is not None:
            box = b if box is None else box.union(b)
    return box


def grid_spec(bbox: BBox, mode: Mode, cfg: AugmentConfig,
              rng: np.random.Generator, frame_height: Optional[int] = None) -> GridSpec:
    """Choose block sizes (random in train, fixed in inference) for one clip."""
    bmin, bmax, binf = cfg.scaled_blocks(frame_height or cfg.base_height)
    if mode == "train":
        block_h = int(rng.integers(bmin, bmax + 1))
        block_w = int(rng.integers(bmin, bmax + 1))
    elif mode == "inference":
        block_h = block_w = binf
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return GridSpec(block_h, block_w, bbox.height // block_h, bbox.width // block_w)


def grid_augment(mask: MaskSequence, spec: GridSpec) -> MaskSequence:
    """Fill every block of the origin-anchored grid that touches the mask."""
    bh, bw = spec.block_h, spec.block_w
    t, h, w = mask.data.shape
    nby, nbx = math.ceil(h / bh), math.ceil(w / bw)
    padded = np.zeros((t, nby * bh, nbx * bw), np.uint8)
    padded[:, :h, :w] = mask.data
    hit = padded.reshape(t, nby, bh, nbx, bw).any(axis=(2, 4))
    out = hit.repeat(bh, axis=1).repeat(bw, axis=2)[:, :h, :w]
    return MaskSequence(out.astype(np.uint8))


def bbox_augment(mask: MaskSequence) -> MaskSequence:
    """Replace each frame's mask by its filled bounding box."""
    out = np.zeros_like(mask.data)
    for t in range(mask.frames):
        box = bbox_of(mask.data[t])
        if box is not None:
            out[t, box.y0:box.y1, box.x0:box.x1] = 1
    return MaskSequence(out)


def boundary_pixels(frame: np.ndarray) -> np.ndarray:
    """(N,2) array of (y,x) positions that are 1 with a 4-adjacent 0 in-frame."""
    m = frame.astype(bool)
    nb_zero = np.zeros_like(m)
    nb_zero[1:, :] |= ~m[:-1, :]
    nb_zero[:-1, :] |= ~m[1:, :]
    nb_zero[:, 1:] |= ~m[:, :-1]
    nb_zero[:, :-1] |= ~m[:, 1:]
    ys, xs = np.nonzero(m & nb_zero)
    return np.stack([ys, xs], axis=1)


def _stamp_shape(frame: np.ndarray, p: ShapeParams, cy: float, cx: float,
                 size: float) -> None:
    h, w = frame.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = size / 2.0
    if p.kind == "circle":
        hit = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif p.kind == "rectangle":
        hit = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r * p.aspect)
    elif p.kind == "triangle":
        angles = p.angle + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
        vy = cy + r * np.sin(angles)
        vx = cx + r * np.cos(angles)
        hit = np.ones((h, w), bool)
        for i in range(3):
            j = (i + 1) % 3
            cross = (vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i])
            hit &= cross >= 0
    else:
        raise ConfigError(f"unknown shape kind {p.kind!r}")
    frame[hit] = 1


def sample_shapes(mask: MaskSequence, cfg: AugmentConfig,
                  rng: np.random.Generator) -> list[ShapeParams]:
    """Draw per-clip shape parameters anchored to the first nonempty frame."""
    ref_t = next((t for t in range(mask.frames) if not mask.frame_empty(t)), None)
    if ref_t is None:
        return []
    bpix = boundary_pixels(mask.data[ref_t])
    if bpix.shape[0] == 0:
        return []
    box = bbox_of(mask.data[ref_t])
    cx, cy = box.center()
    n = int(rng.integers(cfg.shape_count_min, cfg.shape_count_max + 1))
    shapes = []
    for _ in range(n):
        kind = SHAPE_KINDS[int(rng.integers(0, len(SHAPE_KINDS)))]
        by, bx = bpix[int(rng.integers(0, bpix.shape[0]))]
        shapes.append(ShapeParams(
            kind=kind,
            offset_y=int(by - round(cy)),
            offset_x=int(bx - round(cx)),
            scale=float(rng.uniform(cfg.shape_scale_min, cfg.shape_scale_max)),
            aspect=float(rng.uniform(0.5, 1.5)),
            angle=float(rng.uniform(0.0, 2.0 * np.pi)),
        ))
    return shapes


def shape_augment(mask: MaskSequence, cfg: AugmentConfig,
                  rng: np.random.Generator,
                  shapes: Optional[list[ShapeParams]] = None) -> MaskSequence:
    """Union the mask with random shapes riding on each frame's bbox center."""
    if mask.all_empty():
        return mask
    if shapes is None:
        shapes = sample_shapes(mask, cfg, rng)
    if not shapes:
        return mask
    out = mask.data.copy()
    for t in range(mask.frames):
        box = bbox_of(out[t])
        if box is None:
            continue
        cx, cy = box.center()
        base = float(max(box.height, box.width))
        for p in shapes:
            size = max(2.0, p.scale * base)
            _stamp_shape(out[t], p, cy + p.offset_y, cx + p.offset_x, size)
    return MaskSequence(out)


def augment_traced(mask: MaskSequence, mode: Mode, cfg: AugmentConfig,
                   rng: np.random.Generator) -> tuple[MaskSequence, AugmentTrace]:
    """Full augmentation policy for one clip, returning the parameter trace.

    Train: bbox fill with probability ``bbox_prob``; otherwise one grid drawn
    per clip, optionally followed by extra shapes. Inference: always the
    fixed-block grid, no shapes.
    """
    if mask.all_empty():
        raise EmptyMaskError("no subject")
    box = union_bbox(mask)
    if mode == "train":
        if rng.random() < cfg.bbox_prob:
            return bbox_augment(mask), AugmentTrace(mode=mode, branch="bbox")
        spec = grid_spec(box, "train", cfg, rng, frame_height=mask.height)
        out = grid_augment(mask, spec)
        trace = AugmentTrace(mode=mode, branch="grid",
                             block_h=spec.block_h, block_w=spec.block_w)
        if rng.random() < cfg.shape_prob:
            trace.shapes = sample_shapes(out, cfg, rng)
            out = shape_augment(out, cfg, rng, shapes=trace.shapes)
        return out, trace
    if mode == "inference":
        spec = grid_spec(box, "inference", cfg, rng, frame_height=mask.height)
        out = grid_augment(mask, spec)
        return out, AugmentTrace(mode=mode, branch="grid",
                                 block_h=spec.block_h, block_w=spec.block_w)
    raise ConfigError(f"unknown mode {mode!r}")


def augment(mask: MaskSequence, mode: Mode, cfg: AugmentConfig,
            rng: np.random.Generator) -> MaskSequence:
    return augment_traced(mask, mode, cfg, rng)[0]
