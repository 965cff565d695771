import numpy as np
import pytest
import torch

from vidswap import ConfigError, EmptyMaskError, MaskSequence, VideoClip
from vidswap.core import extract_reference
from vidswap.denoiser import DenoiserConfig, SwapDenoiser
from vidswap.inference import (
    SwapRequest,
    Tunnel,
    blend_back,
    box_blur_mask,
    mean_area_ratio,
    plan_tunnel,
    run_swap,
    run_swap_traced,
    schedule_segments,
    widen_tunnel,
)
from vidswap.mask_augment import AugmentConfig, augment

from conftest import block_mask, make_clip


@pytest.fixture(scope="module")
def tiny_model():
    return SwapDenoiser(DenoiserConfig(layers=1, seed=0))


def swap_setup(seed=0, t=5, h=32, w=32, mask_box=(8, 20, 8, 24)):
    rng = np.random.default_rng(seed)
    clip = make_clip(rng, t=t, h=h, w=w)
    mask = block_mask(t, h, w, *mask_box)
    ref = extract_reference(clip, mask, 0)
    return clip, mask, ref


class TestPlanTunnel:
    def test_small_ratio_activates(self):
        mask = block_mask(3, 64, 64, 10, 16, 10, 20)  # 60/4096 ~ 0.0146
        tunnel = plan_tunnel(mask, 64, 64)
        assert tunnel.active
        box = tunnel.box
        assert box.x0 % 8 == 0 and box.y0 % 8 == 0
        assert box.x1 % 8 == 0 and box.y1 % 8 == 0
        assert (box.x0, box.y0) <= (10, 10) and box.x1 >= 20 and box.y1 >= 16

    def test_large_ratio_full_frame(self):
        mask = block_mask(2, 32, 32, 0, 24, 0, 28)
        tunnel = plan_tunnel(mask, 32, 32)
        assert not tunnel.active
        assert (tunnel.box.x0, tunnel.box.y0, tunnel.box.x1, tunnel.box.y1) == (0, 0, 32, 32)

    def test_centered_box_geometry(self):
        # 10x10 union bbox centered in a 64x64 frame: margin 1.5 gives 15px,
        # snapped outward to multiples of 8 -> edge between 16 and 24
        mask = block_mask(1, 64, 64, 27, 37, 27, 37)
        tunnel = plan_tunnel(mask, 64, 64)
        assert tunnel.active
        assert 16 <= tunnel.box.width <= 24
        assert 16 <= tunnel.box.height <= 24

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyMaskError):
            plan_tunnel(MaskSequence(np.zeros((1, 16, 16), np.uint8)), 16, 16)

    def test_threshold_is_strict(self):
        m = np.zeros((1, 40, 40), np.uint8)
        m[0, :8, :10] = 1  # exactly 80/1600 = 0.05
        assert not plan_tunnel(MaskSequence(m), 40, 40).active
        m2 = m.copy()
        m2[0, 7, 9] = 0  # 79/1600
        assert plan_tunnel(MaskSequence(m2), 40, 40).active

    def test_widen_covers_extra_box(self):
        mask = block_mask(1, 64, 64, 10, 14, 10, 14)
        tunnel = plan_tunnel(mask, 64, 64)
        from vidswap.core import BBox
        widened = widen_tunnel(tunnel, BBox(40, 40, 48, 48), 64, 64)
        assert widened.box.x1 >= 48 and widened.box.y1 >= 48
        assert widened.box.x0 <= tunnel.box.x0


class TestBoxBlur:
    def test_exact_interior_and_exterior(self):
        m = np.zeros((1, 32, 32), np.uint8)
        m[0, 8:24, 8:24] = 1
        alpha = box_blur_mask(m, 4)
        assert alpha[0, 16, 16] == 1.0  # deep interior, exactly one
        assert alpha[0, 0, 0] == 0.0  # beyond the window support, exactly zero
        assert 0.0 < alpha[0, 8, 8] < 1.0  # feathered edge
        assert alpha.min() >= 0.0 and alpha.max() <= 1.0

    def test_radius_zero_is_identity(self):
        m = (np.random.default_rng(0).random((2, 8, 8)) < 0.5).astype(np.uint8)
        assert np.array_equal(box_blur_mask(m, 0), m.astype(np.float32))


class TestBlendBack:
    def full_tunnel(self, h, w):
        from vidswap.core import BBox
        return Tunnel(BBox(0, 0, w, h), False)

    def test_empty_mask_feather0_identity(self, rng):
        src = make_clip(rng, t=2, h=16, w=16)
        gen = make_clip(np.random.default_rng(1), t=2, h=16, w=16)
        empty = MaskSequence(np.zeros((2, 16, 16), np.uint8))
        out = blend_back(src, gen, self.full_tunnel(16, 16), empty, feather_px=0)
        assert np.array_equal(out.data, src.data)

    def test_feather0_outside_mask_bitexact(self, rng):
        src = make_clip(rng, t=2, h=16, w=16)
        gen = make_clip(np.random.default_rng(1), t=2, h=16, w=16)
        mask = block_mask(2, 16, 16, 4, 10, 4, 12)
        out = blend_back(src, gen, self.full_tunnel(16, 16), mask, feather_px=0)
        outside = mask.data[:, None] == 0
        assert np.array_equal(out.data[outside.repeat(3, 1)],
                              src.data[outside.repeat(3, 1)])
        inside = mask.data[:, None] == 1
        assert np.array_equal(out.data[inside.repeat(3, 1)],
                              gen.data[inside.repeat(3, 1)])

    def test_feather_alpha_support(self, rng):
        src = make_clip(rng, t=1, h=32, w=32)
        gen = make_clip(np.random.default_rng(2), t=1, h=32, w=32)
        mask = block_mask(1, 32, 32, 4, 28, 4, 28)
        out = blend_back(src, gen, self.full_tunnel(32, 32), mask, feather_px=4)
        # deep interior (distance > 4 from the mask edge): pure generated
        assert np.array_equal(out.data[0, :, 16, 16], gen.data[0, :, 16, 16])
        # mixing happens near the boundary
        assert not np.array_equal(out.data[0, :, 4, 4], gen.data[0, :, 4, 4])
        assert not np.array_equal(out.data[0, :, 4, 4], src.data[0, :, 4, 4])

    def test_outside_tunnel_untouched_any_feather(self, rng):
        src = make_clip(rng, t=1, h=32, w=32)
        mask = block_mask(1, 32, 32, 8, 16, 8, 16)
        from vidswap.core import BBox
        tunnel = Tunnel(BBox(0, 0, 24, 24), True)
        gen = VideoClip(np.random.default_rng(3).random((1, 3, 24, 24), dtype=np.float32))
        for feather in (0, 4):
            out = blend_back(src, gen, tunnel, mask, feather_px=feather)
            assert np.array_equal(out.data[:, :, :, 24:], src.data[:, :, :, 24:])
            assert np.array_equal(out.data[:, :, 24:, :], src.data[:, :, 24:, :])

    def test_dim_mismatch(self, rng):
        src = make_clip(rng, t=1, h=16, w=16)
        gen = make_clip(rng, t=1, h=32, w=32)
        mask = block_mask(1, 16, 16, 2, 6, 2, 6)
        with pytest.raises(Exception):
            blend_back(src, gen, self.full_tunnel(16, 16), mask, 0)


class TestScheduler:
    def test_examples(self):
        assert schedule_segments(33, 17) == [(0, 16), (16, 32)]
        assert schedule_segments(17, 17) == [(0, 16)]
        assert schedule_segments(1, 17) == [(0, 0)]

    def test_stretched_final_segment(self):
        segs = schedule_segments(40, 17)
        assert segs[:2] == [(0, 16), (16, 32)]
        s, e = segs[-1]
        assert e == 39 and (e - s + 1) % 4 == 1
        overlap = segs[-2][1] - s + 1
        assert 1 <= overlap <= 4  # minimal backward stretch

    def test_bad_lengths(self):
        with pytest.raises(ConfigError):
            schedule_segments(33, 4)
        with pytest.raises(ConfigError):
            schedule_segments(33, 16)
        with pytest.raises(ConfigError):
            schedule_segments(0, 17)

    def test_tiny_totals_without_valid_split(self):
        for t in (2, 3, 4):
            with pytest.raises(ConfigError):
                schedule_segments(t, 9)

    def test_properties_over_range(self):
        for total in list(range(5, 120)) + [513, 997, 1000]:
            for length in (9, 13, 17, 33):
                segs = schedule_segments(total, length)
                covered = set()
                for s, e in segs:
                    assert 0 <= s <= e <= total - 1
                    assert (e - s + 1) % 4 == 1
                    covered.update(range(s, e + 1))
                assert covered == set(range(total))
                assert segs[-1][1] == total - 1
                for (s1, e1), (s2, e2) in zip(segs, segs[1:]):
                    shared = e1 - s2 + 1
                    assert 1 <= shared <= 4
                    if total % 4 == 1:
                        assert shared == 1


class TestRunSwap:
    def test_background_exact_with_feather_zero(self, tiny_model):
        clip, mask, ref = swap_setup()
        req = SwapRequest(clip=clip, mask=mask, reference=ref, steps=2, seed=3)
        out, report = run_swap_traced(req, tiny_model, feather_px=0)
        aug = augment(mask, "inference", AugmentConfig(),
                      np.random.default_rng(0))
        outside = (aug.data[:, None] == 0).repeat(3, 1)
        assert np.array_equal(out.data[outside], clip.data[outside])
        assert report["segments"][0]["tunnel"]["active"] is False

    def test_deterministic(self, tiny_model):
        clip, mask, ref = swap_setup(seed=4)
        req = SwapRequest(clip=clip, mask=mask, reference=ref, steps=3, seed=11)
        a = run_swap(req, tiny_model, feather_px=0)
        b = run_swap(req, tiny_model, feather_px=0)
        assert np.array_equal(a.data, b.data)

    def test_tunnel_path_outside_box_exact(self, tiny_model):
        clip, mask, ref = swap_setup(seed=5, t=5, h=64, w=64, mask_box=(10, 16, 10, 18))
        assert mean_area_ratio(mask) < 0.05
        req = SwapRequest(clip=clip, mask=mask, reference=ref, steps=2, seed=1)
        out, report = run_swap_traced(req, tiny_model, feather_px=4)
        info = report["segments"][0]["tunnel"]
        assert info["active"] is True
        x0, y0, x1, y1 = info["box"]
        assert np.array_equal(out.data[:, :, :, :x0], clip.data[:, :, :, :x0])
        assert np.array_equal(out.data[:, :, :, x1:], clip.data[:, :, :, x1:])
        assert np.array_equal(out.data[:, :, :y0, :], clip.data[:, :, :y0, :])
        assert np.array_equal(out.data[:, :, y1:, :], clip.data[:, :, y1:, :])

    def test_segment_stitching_first_segment_identical(self, tiny_model):
        # frames of segment 0 are produced once: the long run's first 17
        # output frames equal a standalone run on the truncated request
        rng = np.random.default_rng(8)
        clip = make_clip(rng, t=33, h=32, w=32)
        mask = block_mask(33, 32, 32, 8, 20, 8, 20)
        ref = extract_reference(clip, mask, 0)
        req_long = SwapRequest(clip=clip, mask=mask, reference=ref, steps=2, seed=5)
        out_long, report = run_swap_traced(req_long, tiny_model, feather_px=0,
                                           segment_length=17)
        assert [tuple((s["start"], s["end"])) for s in report["segments"]] == \
            [(0, 16), (16, 32)]
        clip17 = VideoClip(clip.data[:17])
        req_short = SwapRequest(clip=clip17, mask=MaskSequence(mask.data[:17]),
                                reference=ref, steps=2, seed=5)
        out_short = run_swap(req_short, tiny_model, feather_px=0,
                             segment_length=17)
        assert np.array_equal(out_long.data[:17], out_short.data)

    def test_long_video_next_segment_consumes_previous_output(self, tiny_model):
        # if stitching were broken and segment 1 read the source frame 16
        # instead of segment 0's output, its generation would differ
        rng = np.random.default_rng(9)
        clip = make_clip(rng, t=33, h=32, w=32)
        mask = block_mask(33, 32, 32, 8, 20, 8, 20)
        ref = extract_reference(clip, mask, 0)
        req = SwapRequest(clip=clip, mask=mask, reference=ref, steps=2, seed=6)
        out, _ = run_swap_traced(req, tiny_model, feather_px=0, segment_length=17)
        # frame 16 belongs to segment 0's blend; masked region is generated
        aug = augment(MaskSequence(mask.data[:17]), "inference", AugmentConfig(),
                      np.random.default_rng(0))
        inside = aug.data[16].astype(bool)
        assert not np.array_equal(out.data[16, :, inside], clip.data[16, :, inside])

    def test_missing_model_rejected(self):
        clip, mask, ref = swap_setup()
        req = SwapRequest(clip=clip, mask=mask, reference=ref, steps=1, seed=0)
        with pytest.raises(ConfigError):
            run_swap(req, None)

    def test_request_validation(self):
        clip, mask, ref = swap_setup()
        with pytest.raises(EmptyMaskError):
            SwapRequest(clip=clip,
                        mask=MaskSequence(np.zeros_like(mask.data)),
                        reference=ref)
        with pytest.raises(Exception):
            SwapRequest(clip=clip, mask=mask, reference=ref,
                        first_frame_override=np.zeros((3, 8, 8), np.float32))

    def test_first_frame_override_changes_output(self, tiny_model):
        clip, mask, ref = swap_setup(seed=6)
        req_a = SwapRequest(clip=clip, mask=mask, reference=ref, steps=2, seed=2)
        override = np.clip(clip.data[0] + 0.2, 0, 1)
        req_b = SwapRequest(clip=clip, mask=mask, reference=ref, steps=2, seed=2,
                            first_frame_override=override)
        out_a = run_swap(req_a, tiny_model, feather_px=0)
        out_b = run_swap(req_b, tiny_model, feather_px=0)
        assert not np.array_equal(out_a.data, out_b.data)
        # conditioning only: the background stays the source either way
        aug = augment(mask, "inference", AugmentConfig(), np.random.default_rng(0))
        outside = (aug.data[:, None] == 0).repeat(3, 1)
        assert np.array_equal(out_b.data[outside], clip.data[outside])
