"""Exactly invertible pixel-to-latent codec with the video compression contract.

A clip of T frames (T = 1 mod 4, spatial dims multiples of 8) maps to
f' = (T-1)//4 + 1 latent frames: pixel frame 0 alone feeds latent frame 0,
then every group of four pixel frames feeds one latent frame. Each latent
channel indexes (pixel channel c, temporal slot j, spatial offset dy, dx)
as ``ch = ((c*4 + j)*8 + dy)*8 + dx``, so the latent has 3*4*8*8 = 768
channels at 1/8 the spatial resolution. Frame 0 is replicated across the
four temporal slots; decode reads slot j=0 back.

The rearrangement is lossless: ``decode(encode(v)) == v`` bit-exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MaskSequence, ReferenceImage, VideoClip
from .errors import ShapeError

TEMPORAL_FACTOR = 4
SPATIAL_FACTOR = 8
LATENT_CHANNELS = 3 * TEMPORAL_FACTOR * SPATIAL_FACTOR * SPATIAL_FACTOR  # 768
MASK_LATENT_CHANNELS = TEMPORAL_FACTOR


@dataclass(frozen=True)
class CodecSpec:
    temporal_factor: int = TEMPORAL_FACTOR
    spatial_factor: int = SPATIAL_FACTOR
    latent_channels: int = LATENT_CHANNELS


@dataclass(frozen=True)
class LatentBlock:
    """A latent tensor (frames, channels, height, width) of finite reals."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.dtype not in (np.float32, np.float64):
            d = d.astype(np.float32)
        if d.ndim != 4 or min(d.shape) < 1:
            raise ShapeError(f"latent must be 4D (f,c,h,w), got {d.shape}")
        if not np.isfinite(d).all():
            raise ShapeError("latent contains non-finite values")
        d = np.ascontiguousarray(d)
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]


def latent_frames(pixel_frames: int) -> int:
    return (pixel_frames - 1) // TEMPORAL_FACTOR + 1


def _check_temporal(t: int) -> None:
    if t % TEMPORAL_FACTOR != 1:
        raise ShapeError(f"invalid clip length {t}: must be 1 mod {TEMPORAL_FACTOR}")


def _temporal_stack(frames: np.ndarray) -> np.ndarray:
    """(T, ...) -> (f', 4, ...): frame 0 replicated, then groups of four."""
    t = frames.shape[0]
    fp = latent_frames(t)
    head = np.broadcast_to(frames[0], (1, TEMPORAL_FACTOR) + frames.shape[1:])
    if t == 1:
        return np.ascontiguousarray(head)
    body = frames[1:].reshape((fp - 1, TEMPORAL_FACTOR) + frames.shape[1:])
    return np.concatenate([head, body], axis=0)


def encode(clip: VideoClip) -> LatentBlock:
    """Pack a clip into the (f', 768, H/8, W/8) latent layout."""
    _check_temporal(clip.frames)
    t, h, w = clip.frames, clip.height, clip.width
    fp, lh, lw = latent_frames(t), h // SPATIAL_FACTOR, w // SPATIAL_FACTOR
    stack = _temporal_stack(clip.data)  # (fp, j, c, H, W)
    x = stack.reshape(fp, TEMPORAL_FACTOR, 3, lh, SPATIAL_FACTOR, lw, SPATIAL_FACTOR)
    x = x.transpose(0, 2, 1, 4, 6, 3, 5)  # (fp, c, j, dy, dx, lh, lw)
    return LatentBlock(np.ascontiguousarray(x).reshape(fp, LATENT_CHANNELS, lh, lw))


def decode_array(latent: LatentBlock) -> np.ndarray:
    """Unpack the latent layout into raw (T, 3, H, W) pixels, no range checks.

    Sampled latents land here before clipping; frame 0 comes from temporal
    slot 0.
    """
    if latent.channels != LATENT_CHANNELS:
        raise ShapeError(
            f"latent has {latent.channels} channels, codec packs {LATENT_CHANNELS}"
        )
    fp, lh, lw = latent.frames, latent.height, latent.width
    h, w = lh * SPATIAL_FACTOR, lw * SPATIAL_FACTOR
    x = latent.data.reshape(fp, 3, TEMPORAL_FACTOR, SPATIAL_FACTOR, SPATIAL_FACTOR, lh, lw)
    x = x.transpose(0, 2, 1, 5, 3, 6, 4)  # (fp, j, c, lh, dy, lw, dx)
    frames = np.ascontiguousarray(x).reshape(fp, TEMPORAL_FACTOR, 3, h, w)
    head = frames[0, :1]
    if fp == 1:
        return head
    body = frames[1:].reshape((fp - 1) * TEMPORAL_FACTOR, 3, h, w)
    return np.concatenate([head, body], axis=0)


def decode(latent: LatentBlock) -> VideoClip:
    """Exact inverse of :func:`encode`."""
    return VideoClip(decode_array(latent))


def letterbox(image: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Aspect-preserving nearest resize centered on a zero canvas.

    Works for (3, h, w) images and (h, w) mattes alike; identity-size inputs
    come back bit-exact.
    """
    img = np.asarray(image)
    h, w = img.shape[-2:]
    if h < 1 or w < 1:
        raise ShapeError("cannot letterbox a zero-size image")
    scale = min(target_h / h, target_w / w)
    nh = min(target_h, max(1, int(round(h * scale))))
    nw = min(target_w, max(1, int(round(w * scale))))
    ys = np.minimum((np.arange(nh) + 0.5) * h / nh, h - 1).astype(np.int64)
    xs = np.minimum((np.arange(nw) + 0.5) * w / nw, w - 1).astype(np.int64)
    resized = img[..., ys[:, None], xs[None, :]]
    out = np.zeros(img.shape[:-2] + (target_h, target_w), dtype=img.dtype)
    oy, ox = (target_h - nh) // 2, (target_w - nw) // 2
    out[..., oy:oy + nh, ox:ox + nw] = resized
    return out


def encode_reference(ref: ReferenceImage, target_h: int, target_w: int) -> LatentBlock:
    """Letterbox a reference onto the target canvas and encode it (f' = 1)."""
    canvas = letterbox(ref.data, target_h, target_w)
    return encode(VideoClip(canvas[None]))


def downsample_mask(mask: MaskSequence) -> np.ndarray:
    """Reduce a pixel mask to latent resolution, shape (f', 4, H/8, W/8).

    Temporal slots follow the codec layout (frame 0 replicated across all
    four). Spatial reduction is 8x max-pooling, so any masked pixel marks
    its latent cell.
    """
    _check_temporal(mask.frames)
    h, w = mask.height, mask.width
    if h % SPATIAL_FACTOR or w % SPATIAL_FACTOR:
        raise ShapeError(f"mask dims must be multiples of 8, got {h}x{w}")
    lh, lw = h // SPATIAL_FACTOR, w // SPATIAL_FACTOR
    stack = _temporal_stack(mask.data)  # (fp, 4, H, W)
    pooled = stack.reshape(stack.shape[0], TEMPORAL_FACTOR, lh, SPATIAL_FACTOR,
                           lw, SPATIAL_FACTOR).max(axis=(3, 5))
    return pooled.astype(np.uint8)


def upsample_mask_latent(mask_latent: np.ndarray, pixel_frames: int) -> MaskSequence:
    """Expand a (f', 4, h, w) mask latent back to pixel resolution.

    Nearest 8x upsampling of the max-pooled latent yields a pixel mask that
    covers the original mask (coverage soundness).
    """
    ml = np.asarray(mask_latent)
    if ml.ndim != 4 or ml.shape[1] != TEMPORAL_FACTOR:
        raise ShapeError(f"mask latent must be (f,4,h,w), got {ml.shape}")
    _check_temporal(pixel_frames)
    fp = latent_frames(pixel_frames)
    if ml.shape[0] != fp:
        raise ShapeError(f"mask latent has {ml.shape[0]} frames, expected {fp}")
    up = ml.repeat(SPATIAL_FACTOR, axis=2).repeat(SPATIAL_FACTOR, axis=3)
    frames = [up[0, 0]]
    for p in range(1, pixel_frames):
        k, j = (p - 1) // TEMPORAL_FACTOR + 1, (p - 1) % TEMPORAL_FACTOR
        frames.append(up[k, j])
    return MaskSequence(np.stack(frames).astype(np.uint8))
