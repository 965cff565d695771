"""Quick invariant suite behind the `selftest` subcommand.

Each check is small enough to run in seconds; together they cover the shape
contracts, codec round-trip, attention asymmetry, loss identities, mask
augmentation supersets, the segment scheduler, and tunnel activation.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
import torch

from .codec import LatentBlock, decode, downsample_mask, encode, encode_reference, latent_frames
from .core import MaskSequence, VideoClip, extract_reference, make_agnostic
from .fusion import FUSED_CHANNELS, FusionConfig, assemble
from .inference import plan_tunnel, schedule_segments
from .mask_augment import AugmentConfig, augment
from .training import reweighted_loss


def _random_clip(rng, t, h, w):
    return VideoClip(rng.random((t, 3, h, w), dtype=np.float32))


def check_shapes() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    for t in (1, 5, 17):
        for h, w in ((32, 32), (32, 64)):
            clip = _random_clip(rng, t, h, w)
            fp = latent_frames(t)
            lat = encode(clip)
            if lat.data.shape != (fp, 768, h // 8, w // 8):
                return False, f"encode shape {lat.data.shape} for T={t}"
            mask = MaskSequence(np.ones((t, h, w), np.uint8))
            if downsample_mask(mask).shape != (fp, 4, h // 8, w // 8):
                return False, f"mask latent shape for T={t}"
    return True, "encode/downsample shapes over T in {1,5,17}"


def check_roundtrip() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    for t in (1, 5, 17):
        clip = _random_clip(rng, t, 3 * 16, 2 * 16)
        if not np.array_equal(decode(encode(clip)).data, clip.data):
            return False, f"round-trip mismatch at T={t}"
    return True, "decode(encode(v)) bit-exact"


def check_fusion() -> tuple[bool, str]:
    rng = np.random.default_rng(2)
    clip = _random_clip(rng, 5, 32, 32)
    m = np.zeros((5, 32, 32), np.uint8)
    m[:, 8:20, 8:20] = 1
    mask = MaskSequence(m)
    lat = encode(clip)
    agn = encode(make_agnostic(clip, mask))
    ref = encode_reference(extract_reference(clip, mask, 0), 32, 32)
    fused = assemble(lat, agn, agn, downsample_mask(mask), ref, FusionConfig(),
                     clean_first=LatentBlock(lat.data[:1]))
    if fused.tensor.shape != (3, FUSED_CHANNELS, 4, 4):
        return False, f"fused shape {fused.tensor.shape}"
    layout = fused.layout
    forbidden = (~fused.attention_mask).sum()
    if forbidden != layout.ref_tokens * layout.video_tokens:
        return False, "forbidden attention count"
    return True, "fused layout and attention asymmetry"


def check_loss_identities() -> tuple[bool, str]:
    pe = torch.ones(1, 3, 768, 4, 4)
    loss_mask = np.array([False, True, True])
    full = reweighted_loss(pe, torch.ones(1, 2, 4, 4, 4), loss_mask, 1.0).value
    quarter_mask = torch.zeros(1, 2, 4, 4, 4)
    quarter_mask[:, :, :, :2, :2] = 1
    quarter = reweighted_loss(pe, quarter_mask, loss_mask, 1.0).value
    if abs(full - 1.0) > 1e-6:
        return False, f"full-mask collapse gave {full}"
    if abs(quarter - 1.75) > 1e-6:
        return False, f"quarter-mask gave {quarter}"
    return True, "loss collapse 1.0 and quarter-mask 1.75"


def check_augment_superset() -> tuple[bool, str]:
    cfg = AugmentConfig()
    for seed in range(50):
        rng = np.random.default_rng(seed)
        m = np.zeros((3, 32, 32), np.uint8)
        y, x = rng.integers(0, 24, 2)
        m[:, y:y + 8, x:x + 8] = 1
        mask = MaskSequence(m)
        for mode in ("train", "inference"):
            out = augment(mask, mode, cfg, np.random.default_rng(seed))
            if (out.data < mask.data).any():
                return False, f"superset violated seed={seed} mode={mode}"
    return True, "augmented masks are per-frame supersets (50 seeds x 2 modes)"


def check_scheduler() -> tuple[bool, str]:
    if schedule_segments(33, 17) != [(0, 16), (16, 32)]:
        return False, "T=33 schedule"
    if schedule_segments(17, 17) != [(0, 16)]:
        return False, "T=17 schedule"
    for t in range(5, 200, 7):
        segs = schedule_segments(t, 17)
        covered = set()
        for s, e in segs:
            if (e - s + 1) % 4 != 1:
                return False, f"bad length at T={t}"
            covered.update(range(s, e + 1))
        if covered != set(range(t)):
            return False, f"coverage hole at T={t}"
    return True, "segment coverage and mod-4 lengths"


def check_tunnel() -> tuple[bool, str]:
    m = np.zeros((1, 40, 40), np.uint8)
    m[0, :8, :10] = 1  # 80/1600 = 0.05 exactly
    if plan_tunnel(MaskSequence(m), 40, 40).active:
        return False, "ratio 0.05 should be inactive"
    m2 = m.copy()
    m2[0, 7, 9] = 0  # 79/1600 < 0.05
    if not plan_tunnel(MaskSequence(m2), 40, 40).active:
        return False, "ratio below 0.05 should be active"
    return True, "tunnel activation flips at 0.05"


CHECKS: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
    ("shape-contract", check_shapes),
    ("codec-roundtrip", check_roundtrip),
    ("condition-fusion", check_fusion),
    ("loss-identities", check_loss_identities),
    ("mask-superset", check_augment_superset),
    ("segment-scheduler", check_scheduler),
    ("tunnel-threshold", check_tunnel),
]


def run_selftest(echo=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
