"""Full swap pipeline: tunnel cropping, Euler sampling, segment stitching.

Long clips are split into segments sharing one frame: the previous segment's
last output frame becomes the next segment's first frame and its first-frame
conditioning anchor, so content extends coherently. When the subject is tiny
(mean mask area below the activation threshold) generation runs inside a
tight crop around the mask and is blended back, leaving everything outside
the crop untouched.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .codec import (
    LATENT_CHANNELS,
    SPATIAL_FACTOR,
    LatentBlock,
    decode_array,
    downsample_mask,
    encode,
    encode_reference,
)
from .core import BBox, MaskSequence, PoseSequence, ReferenceImage, VideoClip, make_agnostic
from .denoiser import SwapDenoiser, fused_to_torch
from .errors import ConfigError, EmptyMaskError, ShapeError
from .fusion import FusionConfig, assemble
from .mask_augment import AugmentConfig, augment_traced, union_bbox

TUNNEL_THRESHOLD = 0.05
TUNNEL_MARGIN = 1.5
DEFAULT_SEGMENT_LENGTH = 17
DEFAULT_FEATHER_PX = 4


@dataclass(frozen=True)
class SwapRequest:
    clip: VideoClip
    mask: MaskSequence
    reference: ReferenceImage
    pose: Optional[PoseSequence] = None
    first_frame_override: Optional[np.ndarray] = None  # (3, H, W) in [0,1]
    steps: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.mask.matches(self.clip):
            raise ShapeError("mask does not match clip dimensions")
        if self.mask.all_empty():
            raise EmptyMaskError("request mask has no subject in any frame")
        if self.first_frame_override is not None:
            o = np.asarray(self.first_frame_override, dtype=np.float32)
            if o.shape != self.clip.data.shape[1:]:
                raise ShapeError(
                    f"override shape {o.shape} != frame {self.clip.data.shape[1:]}"
                )
            object.__setattr__(self, "first_frame_override", o)
        if self.steps < 1:
            raise ConfigError("sampler steps must be >= 1")


@dataclass(frozen=True)
class Tunnel:
    box: BBox
    active: bool
    threshold: float = TUNNEL_THRESHOLD
    margin: float = TUNNEL_MARGIN


def _snap_axis(lo: float, hi: float, limit: int, grid: int) -> tuple[int, int]:
    """Cover [lo, hi] with a span that is a multiple of ``grid`` inside
    [0, limit], preferring a grid-aligned start."""
    lo_i = max(0, (int(np.floor(lo)) // grid) * grid)
    hi_i = min(limit, int(np.ceil(hi)))
    span = int(np.ceil(max(1, hi_i - lo_i) / grid)) * grid
    largest = (limit // grid) * grid
    if largest >= grid:
        span = min(span, largest)
    if lo_i + span > limit:
        lo_i = max(0, limit - span)
    return lo_i, lo_i + span


def _snap_box(x0: float, y0: float, x1: float, y1: float,
              frame_h: int, frame_w: int, grid: int = SPATIAL_FACTOR) -> BBox:
    """Clamp to the frame; box spans snap outward to multiples of ``grid``."""
    x0, x1 = _snap_axis(x0, x1, frame_w, grid)
    y0, y1 = _snap_axis(y0, y1, frame_h, grid)
    return BBox(x0, y0, x1, y1)


def mean_area_ratio(mask: MaskSequence) -> float:
    return float(mask.data.reshape(mask.frames, -1).mean(axis=1).mean())


def plan_tunnel(mask: MaskSequence, frame_h: int, frame_w: int,
                threshold: float = TUNNEL_THRESHOLD,
                margin: float = TUNNEL_MARGIN,
                grid: int = SPATIAL_FACTOR) -> Tunnel:
    """Decide whether to crop, and where.

    Active iff the mean per-frame mask area ratio is strictly below the
    threshold; the box is the union bbox over frames, expanded about its
    center by the margin factor, clamped and snapped to multiples of
    ``grid`` (at least 8, so the crop satisfies the codec contract).
    Inactive tunnels carry the full frame.
    """
    if mask.all_empty():
        raise EmptyMaskError("cannot plan a tunnel around an empty mask")
    active = mean_area_ratio(mask) < threshold
    if not active:
        return Tunnel(BBox(0, 0, frame_w, frame_h), False, threshold, margin)
    ub = union_bbox(mask)
    cx, cy = ub.center()
    half_w = ub.width * margin / 2.0
    half_h = ub.height * margin / 2.0
    box = _snap_box(cx - half_w, cy - half_h, cx + half_w, cy + half_h,
                    frame_h, frame_w, grid)
    return Tunnel(box, True, threshold, margin)


def widen_tunnel(tunnel: Tunnel, cover: BBox, frame_h: int, frame_w: int,
                 grid: int = SPATIAL_FACTOR) -> Tunnel:
    """Grow an active tunnel box until it also covers ``cover`` (re-snapped)."""
    if not tunnel.active:
        return tunnel
    u = tunnel.box.union(cover)
    box = _snap_box(u.x0, u.y0, u.x1, u.y1, frame_h, frame_w, grid)
    return Tunnel(box, True, tunnel.threshold, tunnel.margin)


def box_blur_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Normalized box blur of a binary (T, H, W) mask via exact integer sums.

    Interior pixels (window fully masked) come out exactly 1.0; pixels beyond
    the window support come out exactly 0.0.
    """
    if radius == 0:
        return mask.astype(np.float32)
    t, h, w = mask.shape
    win = 2 * radius + 1
    padded = np.zeros((t, h + 2 * radius, w + 2 * radius), np.int64)
    padded[:, radius:radius + h, radius:radius + w] = mask
    integral = np.zeros((t, h + 2 * radius + 1, w + 2 * radius + 1), np.int64)
    integral[:, 1:, 1:] = padded.cumsum(axis=1).cumsum(axis=2)
    counts = (
        integral[:, win:, win:]
        - integral[:, :-win, win:]
        - integral[:, win:, :-win]
        + integral[:, :-win, :-win]
    )
    return (counts / float(win * win)).astype(np.float32)


def blend_back(source: VideoClip, generated: VideoClip, tunnel: Tunnel,
               aug_mask: MaskSequence, feather_px: int = DEFAULT_FEATHER_PX) -> VideoClip:
    """Composite the generated tunnel content over the source.

    Outside the tunnel box the source is untouched. Inside, alpha is the
    augmented mask feathered by a normalized box blur; feather 0 composites
    hard, keeping off-mask pixels bit-identical to the source.
    """
    box = tunnel.box
    expected = (source.frames, 3, box.height, box.width)
    if generated.data.shape != expected:
        raise ShapeError(
            f"generated clip shape {generated.data.shape} != tunnel {expected}"
        )
    if not aug_mask.matches(source):
        raise ShapeError("augmented mask does not match source dimensions")
    out = source.data.copy()
    sl = np.s_[:, :, box.y0:box.y1, box.x0:box.x1]
    mask_crop = aug_mask.data[:, box.y0:box.y1, box.x0:box.x1]
    if feather_px == 0:
        region = np.where(mask_crop[:, None].astype(bool), generated.data, out[sl])
    else:
        alpha = box_blur_mask(mask_crop, feather_px)[:, None]
        region = alpha * generated.data + (1.0 - alpha) * out[sl]
    out[sl] = region
    return VideoClip(np.clip(out, 0.0, 1.0))


def schedule_segments(total_frames: int, segment_length: int) -> list[tuple[int, int]]:
    """Split [0, T-1] into stitchable segments of valid codec length.

    Segments step by L-1 so consecutive ones share exactly one frame; the
    final segment ends at T-1, its start pulled backward just enough to keep
    its length 1 mod 4 (which can stretch the last overlap to at most 4
    shared frames when T itself is not 1 mod 4).
    """
    if segment_length < 5 or segment_length % 4 != 1:
        raise ConfigError(
            f"segment length must be >= 5 and 1 mod 4, got {segment_length}"
        )
    if total_frames < 1:
        raise ConfigError("clip must have at least one frame")
    if total_frames == 1:
        return [(0, 0)]
    if total_frames < 5:
        raise ConfigError(
            f"no segmentation with valid lengths exists for T={total_frames}"
        )
    segments = []
    start = 0
    while start + segment_length <= total_frames:
        segments.append((start, start + segment_length - 1))
        start += segment_length - 1
    if not segments:
        first_len = total_frames if total_frames % 4 == 1 else \
            ((total_frames - 1) // 4) * 4 + 1
        segments.append((0, first_len - 1))
    end = segments[-1][1]
    if end < total_frames - 1:
        length = (total_frames - 1 - end) + 1
        while length % 4 != 1:
            length += 1
        segments.append((total_frames - length, total_frames - 1))
    return segments


def euler_sample(model: SwapDenoiser, agnostic_lat: LatentBlock,
                 pose_lat: LatentBlock, mask_lat: np.ndarray,
                 ref_lat: LatentBlock, clean_first: LatentBlock,
                 fusion_cfg: FusionConfig, steps: int, seed: int) -> np.ndarray:
    """Integrate the learned velocity field from pure noise down to t=0.

    The fused conditioning is assembled once with the video noisy group
    zeroed; reference keys/values are computed once and reused across steps.
    Returns the sampled video latent (f', 768, h, w).
    """
    fp = agnostic_lat.frames
    placeholder = LatentBlock(np.zeros_like(agnostic_lat.data))
    fused = assemble(placeholder, agnostic_lat, pose_lat, mask_lat, ref_lat,
                     fusion_cfg, clean_first=clean_first)
    fused_t = fused_to_torch(fused.tensor)
    with torch.no_grad():
        cache = model.prepare_sampling(fused_t)
        gen = torch.Generator().manual_seed(seed)
        x = torch.randn((1, fp, LATENT_CHANNELS, agnostic_lat.height,
                         agnostic_lat.width), generator=gen)
        ts = np.linspace(1.0, 0.0, steps + 1)
        for i in range(steps):
            t = torch.tensor([ts[i]], dtype=torch.float32)
            velocity = model.forward_video(x, t, cache)
            x = x - float(ts[i] - ts[i + 1]) * velocity
    return x[0].numpy()


def _segment_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def run_swap_traced(req: SwapRequest, model: SwapDenoiser,
                    aug_cfg: Optional[AugmentConfig] = None,
                    fusion_cfg: Optional[FusionConfig] = None,
                    segment_length: int = DEFAULT_SEGMENT_LENGTH,
                    feather_px: int = DEFAULT_FEATHER_PX,
                    tunnel_threshold: float = TUNNEL_THRESHOLD,
                    tunnel_margin: float = TUNNEL_MARGIN
                    ) -> tuple[VideoClip, dict]:
    """Swap the masked subject for the reference across the whole clip.

    Returns the output clip and a run report (segments, tunnel decisions,
    timings). Identical requests with identical seeds produce identical
    output.
    """
    if model is None:
        raise ConfigError("run_swap needs trained model weights")
    aug_cfg = aug_cfg or AugmentConfig()
    fusion_cfg = fusion_cfg or FusionConfig()
    height, width = req.clip.height, req.clip.width
    segments = schedule_segments(req.clip.frames, segment_length)
    pose_render = req.pose.render() if req.pose is not None else None

    out = req.clip.data.copy()
    report: dict = {"segments": [], "steps": req.steps, "seed": req.seed,
                    "feather_px": feather_px}
    started = time.perf_counter()
    prev_end = -1
    for k, (s, e) in enumerate(segments):
        seg_started = time.perf_counter()
        seg_entry: dict = {"start": s, "end": e}
        seg_mask = MaskSequence(req.mask.data[s:e + 1])
        if seg_mask.all_empty():
            seg_entry["skipped"] = "empty mask"
            report["segments"].append(seg_entry)
            prev_end = e
            continue
        seg_clip = VideoClip(out[s:e + 1].copy())

        aug_rng = np.random.default_rng([req.seed, 0xA6, k])
        aug_mask, trace = augment_traced(seg_mask, "inference", aug_cfg, aug_rng)
        # Crops must keep the latent grid divisible by the token patch.
        grid = SPATIAL_FACTOR * fusion_cfg.patch
        tunnel = plan_tunnel(seg_mask, height, width, tunnel_threshold,
                             tunnel_margin, grid=grid)
        if tunnel.active:
            tunnel = widen_tunnel(tunnel, union_bbox(aug_mask), height, width,
                                  grid=grid)
        box = tunnel.box
        seg_entry["tunnel"] = {
            "active": tunnel.active,
            "box": [box.x0, box.y0, box.x1, box.y1],
            "mean_area_ratio": mean_area_ratio(seg_mask),
        }
        seg_entry["augment"] = trace.to_json()

        crop = np.s_[:, :, box.y0:box.y1, box.x0:box.x1]
        c_clip = VideoClip(seg_clip.data[crop])
        c_mask = MaskSequence(aug_mask.data[:, box.y0:box.y1, box.x0:box.x1])
        if pose_render is not None:
            c_pose = VideoClip(pose_render[s:e + 1][crop])
        else:
            c_pose = VideoClip(np.zeros_like(c_clip.data))

        if k == 0 and req.first_frame_override is not None:
            anchor = req.first_frame_override[:, box.y0:box.y1, box.x0:box.x1]
        else:
            anchor = c_clip.data[0]
        agnostic = make_agnostic(c_clip, c_mask)
        latent = euler_sample(
            model,
            encode(agnostic),
            encode(c_pose),
            downsample_mask(c_mask),
            encode_reference(req.reference, box.height, box.width),
            encode(VideoClip(anchor[None])),
            fusion_cfg,
            req.steps,
            _segment_seed(req.seed, k),
        )
        generated = VideoClip(np.clip(decode_array(LatentBlock(latent)), 0.0, 1.0))
        blended = blend_back(seg_clip, generated, tunnel, aug_mask, feather_px)
        write_from = s if k == 0 else prev_end + 1
        out[write_from:e + 1] = blended.data[write_from - s:]
        prev_end = e
        seg_entry["seconds"] = time.perf_counter() - seg_started
        report["segments"].append(seg_entry)
    report["seconds_total"] = time.perf_counter() - started
    return VideoClip(out), report


def run_swap(req: SwapRequest, model: SwapDenoiser, **kwargs) -> VideoClip:
    return run_swap_traced(req, model, **kwargs)[0]
