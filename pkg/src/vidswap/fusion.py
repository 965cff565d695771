"""Assembly of the fused model input and its attention and loss masks.

Channel layout per fused frame: [noisy | dummy first-frame stream | agnostic
| pose | mask(4)], i.e. 4 * 768 + 4 = 3076 channels. The reference latent is
prepended at temporal index 0 of both the noisy and dummy streams; the
agnostic, pose and mask groups are zero at that frame. Reference tokens may
attend only to themselves while video tokens attend everywhere, and the
reference frame is excluded from the loss.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .codec import LATENT_CHANNELS, MASK_LATENT_CHANNELS, LatentBlock
from .errors import ConfigError, ShapeError

FUSED_CHANNELS = 4 * LATENT_CHANNELS + MASK_LATENT_CHANNELS  # 3076

NOISY_SLICE = slice(0, LATENT_CHANNELS)
DUMMY_SLICE = slice(LATENT_CHANNELS, 2 * LATENT_CHANNELS)
AGNOSTIC_SLICE = slice(2 * LATENT_CHANNELS, 3 * LATENT_CHANNELS)
POSE_SLICE = slice(3 * LATENT_CHANNELS, 4 * LATENT_CHANNELS)
MASK_SLICE = slice(4 * LATENT_CHANNELS, FUSED_CHANNELS)

REF_POSITION = 0


@dataclass(frozen=True)
class FusionConfig:
    patch: int = 2
    dummy_source: Literal["clean", "noisy"] = "clean"

    def __post_init__(self):
        if self.patch < 1:
            raise ConfigError("patch must be >= 1")
        if self.dummy_source not in ("clean", "noisy"):
            raise ConfigError(f"unknown dummy_source {self.dummy_source!r}")


@dataclass(frozen=True)
class TokenLayout:
    """Token indexing over the fused tensor: frame-major, reference first."""

    frames: int  # f' + 1, including the reference frame
    lat_h: int
    lat_w: int
    patch: int = 2

    def __post_init__(self):
        if self.lat_h % self.patch or self.lat_w % self.patch:
            raise ShapeError(
                f"latent dims {self.lat_h}x{self.lat_w} not divisible by patch {self.patch}"
            )

    @property
    def tokens_per_frame(self) -> int:
        return (self.lat_h // self.patch) * (self.lat_w // self.patch)

    @property
    def total_tokens(self) -> int:
        return self.frames * self.tokens_per_frame

    @property
    def ref_tokens(self) -> int:
        return self.tokens_per_frame

    @property
    def video_tokens(self) -> int:
        return max(0, self.frames - 1) * self.tokens_per_frame


@dataclass(frozen=True)
class FusedInput:
    """The assembled model input plus its attention and loss masks."""

    tensor: np.ndarray  # (f'+1, 3076, h, w)
    attention_mask: np.ndarray  # (tokens, tokens) bool, True = attention allowed
    loss_mask: np.ndarray  # (f'+1,) bool, False at the reference frame
    layout: TokenLayout
    ref_position: int = REF_POSITION

    def __post_init__(self):
        t = self.tensor
        if t.ndim != 4 or t.shape[1] != FUSED_CHANNELS:
            raise ShapeError(f"fused tensor must be (F,{FUSED_CHANNELS},h,w), got {t.shape}")
        ref = t[self.ref_position]
        for name, sl in (("agnostic", AGNOSTIC_SLICE), ("pose", POSE_SLICE),
                         ("mask", MASK_SLICE)):
            if ref[sl].any():
                raise ShapeError(f"{name} channels must be zero at the reference frame")
        if self.loss_mask[self.ref_position]:
            raise ShapeError("loss mask must exclude the reference frame")


def make_dummy_reference(video_latent: LatentBlock) -> LatentBlock:
    """First-frame stream: frame 0 of the input at index 0, zeros after."""
    out = np.zeros_like(video_latent.data)
    out[0] = video_latent.data[0]
    return LatentBlock(out)


def concat_reference(stream: LatentBlock, ref_latent: LatentBlock) -> LatentBlock:
    """Prepend the single-frame reference latent along the temporal axis."""
    if ref_latent.frames != 1:
        raise ShapeError(f"reference latent must have 1 frame, got {ref_latent.frames}")
    if ref_latent.data.shape[1:] != stream.data.shape[1:]:
        raise ShapeError(
            f"reference dims {ref_latent.data.shape[1:]} do not match stream "
            f"{stream.data.shape[1:]}"
        )
    return LatentBlock(np.concatenate([ref_latent.data, stream.data], axis=0))


def split_reference(stream: LatentBlock) -> tuple[LatentBlock, LatentBlock]:
    """Inverse of :func:`concat_reference`."""
    if stream.frames < 2:
        raise ShapeError("nothing to split: stream has no video frames")
    return LatentBlock(stream.data[:1]), LatentBlock(stream.data[1:])


def build_attention_mask(layout: TokenLayout) -> np.ndarray:
    """Boolean (N, N) matrix: video queries see everything, reference queries
    see only reference keys."""
    n = layout.total_tokens
    allowed = np.ones((n, n), dtype=bool)
    tpf = layout.tokens_per_frame
    allowed[:tpf, tpf:] = False
    return allowed


def kv_partition(layout: TokenLayout) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (reference, video) token index sets covering all tokens.

    Reference keys/values are position-stable, so a sampler may compute them
    once and reuse them across steps.
    """
    tpf = layout.tokens_per_frame
    return np.arange(tpf), np.arange(tpf, layout.total_tokens)


def _check_stream(name: str, latent: LatentBlock, shape: tuple[int, ...]) -> None:
    if latent.data.shape != shape:
        raise ShapeError(f"{name} latent has shape {latent.data.shape}, expected {shape}")


def assemble(noisy: LatentBlock, agnostic: LatentBlock, pose: LatentBlock,
             mask_latent: np.ndarray, ref: LatentBlock, cfg: FusionConfig,
             clean_first: Optional[LatentBlock] = None) -> FusedInput:
    """Fuse all condition streams into the final model input.

    ``clean_first`` supplies the single-frame clean latent used as the dummy
    stream's anchor when ``cfg.dummy_source == "clean"``; with ``"noisy"``
    the first frame of the noisy stream is used instead.
    """
    fp = noisy.frames
    shape = (fp, LATENT_CHANNELS, noisy.height, noisy.width)
    _check_stream("noisy", noisy, shape)
    _check_stream("agnostic", agnostic, shape)
    _check_stream("pose", pose, shape)
    ml = np.asarray(mask_latent)
    if ml.shape != (fp, MASK_LATENT_CHANNELS, noisy.height, noisy.width):
        raise ShapeError(
            f"mask latent has shape {ml.shape}, expected "
            f"{(fp, MASK_LATENT_CHANNELS, noisy.height, noisy.width)}"
        )
    _check_stream("reference", ref, (1, LATENT_CHANNELS, noisy.height, noisy.width))

    if cfg.dummy_source == "clean":
        if clean_first is None:
            raise ConfigError("dummy_source='clean' requires clean_first")
        _check_stream("clean_first", clean_first,
                      (1, LATENT_CHANNELS, noisy.height, noisy.width))
        anchor = clean_first.data[0]
    else:
        anchor = noisy.data[0]
    dummy = np.zeros_like(noisy.data)
    dummy[0] = anchor

    dtype = noisy.data.dtype
    zeros_frame = np.zeros((1, LATENT_CHANNELS, noisy.height, noisy.width), dtype)
    noisy_full = np.concatenate([ref.data.astype(dtype), noisy.data], axis=0)
    dummy_full = np.concatenate([ref.data.astype(dtype), dummy], axis=0)
    agnostic_full = np.concatenate([zeros_frame, agnostic.data.astype(dtype)], axis=0)
    pose_full = np.concatenate([zeros_frame, pose.data.astype(dtype)], axis=0)
    mask_full = np.concatenate(
        [np.zeros((1,) + ml.shape[1:], dtype), ml.astype(dtype)], axis=0
    )
    fused = np.concatenate(
        [noisy_full, dummy_full, agnostic_full, pose_full, mask_full], axis=1
    )

    layout = TokenLayout(frames=fp + 1, lat_h=noisy.height, lat_w=noisy.width,
                         patch=cfg.patch)
    loss_mask = np.ones(fp + 1, dtype=bool)
    loss_mask[REF_POSITION] = False
    return FusedInput(tensor=fused, attention_mask=build_attention_mask(layout),
                      loss_mask=loss_mask, layout=layout)
