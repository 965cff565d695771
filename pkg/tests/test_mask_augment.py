import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidswap import AugmentConfig, ConfigError, EmptyMaskError, MaskSequence
from vidswap.mask_augment import (
    GridSpec,
    augment,
    augment_traced,
    bbox_augment,
    bbox_of,
    boundary_pixels,
    grid_augment,
    grid_spec,
    sample_shapes,
    shape_augment,
    union_bbox,
)

from conftest import block_mask


def random_mask(seed, t=3, h=32, w=32, p=0.15):
    r = np.random.default_rng(seed)
    m = np.zeros((t, h, w), np.uint8)
    # a moving block plus salt ensures nonempty frames of varied shape
    y, x = r.integers(0, h - 8), r.integers(0, w - 8)
    for ti in range(t):
        yy = int(np.clip(y + r.integers(-2, 3), 0, h - 8))
        xx = int(np.clip(x + r.integers(-2, 3), 0, w - 8))
        m[ti, yy:yy + 8, xx:xx + 8] = 1
        salt = r.random((h, w)) < p * 0.05
        m[ti] |= salt.astype(np.uint8)
    return MaskSequence(m)


class TestBBox:
    def test_single_pixel(self):
        m = np.zeros((8, 8), np.uint8)
        m[3, 4] = 1
        box = bbox_of(m)
        assert (box.x0, box.y0, box.x1, box.y1) == (4, 3, 5, 4)

    def test_full_frame(self):
        box = bbox_of(np.ones((6, 9), np.uint8))
        assert (box.x0, box.y0, box.x1, box.y1) == (0, 0, 9, 6)

    def test_two_corners(self):
        m = np.zeros((12, 12), np.uint8)
        m[0, 0] = 1
        m[9, 9] = 1
        box = bbox_of(m)
        # brute-force scan oracle
        ys = [y for y in range(12) for x in range(12) if m[y, x]]
        xs = [x for y in range(12) for x in range(12) if m[y, x]]
        assert (box.y0, box.y1) == (min(ys), max(ys) + 1) == (0, 10)
        assert (box.x0, box.x1) == (min(xs), max(xs) + 1) == (0, 10)

    def test_empty(self):
        assert bbox_of(np.zeros((4, 4), np.uint8)) is None


class TestGridSpec:
    def test_inference_division(self):
        cfg = AugmentConfig(infer_block=40)
        box = bbox_of(np.ones((120, 60), np.uint8))
        spec = grid_spec(box, "inference", cfg, np.random.default_rng(0))
        assert spec.block_h == 40 and spec.blocks_h == 3

    def test_small_bbox_gives_zero_blocks(self):
        cfg = AugmentConfig(infer_block=32)
        box = bbox_of(np.ones((8, 8), np.uint8))
        spec = grid_spec(box, "inference", cfg, np.random.default_rng(0))
        assert spec.blocks_h == 0 and spec.blocks_w == 0

    def test_train_reproducible(self):
        cfg = AugmentConfig()
        box = bbox_of(np.ones((50, 50), np.uint8))
        a = grid_spec(box, "train", cfg, np.random.default_rng(9), frame_height=256)
        b = grid_spec(box, "train", cfg, np.random.default_rng(9), frame_height=256)
        assert a == b
        assert cfg.train_block_min <= a.block_h <= cfg.train_block_max

    def test_scaling_with_frame_height(self):
        cfg = AugmentConfig()
        assert cfg.scaled_blocks(256) == (16, 96, 32)
        assert cfg.scaled_blocks(64) == (4, 24, 8)

    def test_blocks_monotone_in_bbox_height(self):
        cfg = AugmentConfig(infer_block=16)
        rng = np.random.default_rng(0)
        prev = -1
        for bh in range(1, 257):
            spec = grid_spec(
                bbox_of(np.ones((bh, 10), np.uint8)), "inference", cfg, rng)
            assert spec.blocks_h >= prev
            prev = spec.blocks_h


class TestGridAugment:
    def test_block_one_is_identity(self):
        mask = random_mask(0)
        out = grid_augment(mask, GridSpec(1, 1, 0, 0))
        assert np.array_equal(out.data, mask.data)

    def test_full_frame_block(self):
        mask = block_mask(2, 32, 32, 5, 6, 5, 6)
        out = grid_augment(mask, GridSpec(32, 32, 0, 0))
        assert out.data.min() == 1

    def test_single_pixel_block_membership(self):
        m = np.zeros((1, 64, 64), np.uint8)
        m[0, 10, 10] = 1
        out = grid_augment(MaskSequence(m), GridSpec(8, 8, 1, 1))
        # brute-force: every pixel sharing the 8x8 block of (10,10)
        expected = np.zeros((64, 64), np.uint8)
        for y in range(64):
            for x in range(64):
                if y // 8 == 10 // 8 and x // 8 == 10 // 8:
                    expected[y, x] = 1
        assert np.array_equal(out.data[0], expected)

    def test_superset_and_block_alignment(self):
        mask = random_mask(5)
        out = grid_augment(mask, GridSpec(5, 7, 0, 0))
        assert (out.data >= mask.data).all()
        # filled blocks only: value constant within each grid cell
        for t in range(mask.frames):
            for by in range(0, 32, 5):
                for bx in range(0, 32, 7):
                    cell = out.data[t, by:by + 5, bx:bx + 7]
                    assert cell.min() == cell.max()

    def test_divisor_chain_monotone(self):
        mask = random_mask(11)
        fine = grid_augment(mask, GridSpec(4, 4, 0, 0))
        coarse = grid_augment(mask, GridSpec(8, 8, 0, 0))
        assert (coarse.data >= fine.data).all()


class TestBBoxAugment:
    def test_rectangle_fixed_point(self):
        mask = block_mask(2, 32, 32, 4, 12, 6, 18)
        assert np.array_equal(bbox_augment(mask).data, mask.data)

    def test_l_shape_fills(self):
        m = np.zeros((1, 32, 32), np.uint8)
        m[0, 0:10, 0:2] = 1
        m[0, 8:10, 0:10] = 1
        out = bbox_augment(MaskSequence(m))
        assert np.array_equal(out.data[0, 0:10, 0:10], np.ones((10, 10), np.uint8))
        assert out.data[0, 10:, :].max() == 0

    def test_empty_frame_stays_empty(self):
        m = np.zeros((2, 16, 16), np.uint8)
        m[0, 3:5, 3:5] = 1
        out = bbox_augment(MaskSequence(m))
        assert out.data[1].max() == 0


class TestShapeAugment:
    def test_union_semantics(self):
        cfg = AugmentConfig()
        for seed in range(20):
            mask = random_mask(seed)
            out = shape_augment(mask, cfg, np.random.default_rng(seed))
            assert (out.data >= mask.data).all()

    def test_empty_mask_unchanged(self):
        cfg = AugmentConfig()
        mask = MaskSequence(np.zeros((2, 16, 16), np.uint8))
        out = shape_augment(mask, cfg, np.random.default_rng(0))
        assert np.array_equal(out.data, mask.data)

    def test_zero_probability_never_applies(self):
        # Monte Carlo counter over 1000 seeds: p_shape=0 must never add shapes
        cfg = AugmentConfig(shape_prob=0.0)
        mask = block_mask(1, 32, 32, 8, 16, 8, 16)
        for seed in range(1000):
            _, trace = augment_traced(mask, "train", cfg, np.random.default_rng(seed))
            assert trace.shapes == []

    def test_circle_area_bound(self):
        # rasterization oracle: one circle adds at most pi*(r+1)^2 pixels
        cfg = AugmentConfig(shape_scale_min=0.3, shape_scale_max=0.3,
                            shape_count_min=1, shape_count_max=1)
        mask = block_mask(1, 64, 64, 24, 40, 24, 40)  # bbox 16x16
        rng = np.random.default_rng(3)
        shapes = sample_shapes(mask, cfg, rng)
        shapes[0].kind = "circle"
        out = shape_augment(mask, cfg, rng, shapes=shapes)
        added = int(out.data.sum() - mask.data.sum())
        radius = 0.3 * 16 / 2
        assert added <= np.pi * (radius + 1) ** 2

    def test_boundary_pixels_definition(self):
        m = np.zeros((5, 5), np.uint8)
        m[1:4, 1:4] = 1
        bp = {(y, x) for y, x in boundary_pixels(m)}
        expected = {(y, x) for y in range(1, 4) for x in range(1, 4)} - {(2, 2)}
        assert bp == expected
        # full frame has no boundary (no in-frame zero neighbors)
        assert boundary_pixels(np.ones((4, 4), np.uint8)).shape[0] == 0


class TestAugmentPolicy:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), mode=st.sampled_from(["train", "inference"]))
    def test_superset_property(self, seed, mode):
        mask = random_mask(seed % 97)
        out = augment(mask, mode, AugmentConfig(), np.random.default_rng(seed))
        assert (out.data >= mask.data).all()

    def test_inference_grid_arithmetic(self):
        # 256px frame, bbox height 128, block 32 -> 4 blocks over the bbox
        cfg = AugmentConfig()
        m = np.zeros((1, 256, 256), np.uint8)
        m[0, 40:168, 30:80] = 1
        mask = MaskSequence(m)
        _, trace = augment_traced(mask, "inference", cfg, np.random.default_rng(0))
        assert trace.block_h == 32
        spec = grid_spec(union_bbox(mask), "inference", cfg,
                         np.random.default_rng(0), frame_height=256)
        assert spec.blocks_h == 4

    def test_train_deterministic(self):
        mask = random_mask(42, t=4)
        cfg = AugmentConfig()
        a = augment(mask, "train", cfg, np.random.default_rng(7))
        b = augment(mask, "train", cfg, np.random.default_rng(7))
        assert np.array_equal(a.data, b.data)

    def test_all_empty_raises(self):
        with pytest.raises(EmptyMaskError, match="no subject"):
            augment(MaskSequence(np.zeros((2, 16, 16), np.uint8)), "train",
                    AugmentConfig(), np.random.default_rng(0))

    def test_temporal_coherence_one_block_size(self):
        # the same grid must apply to every frame of the clip
        mask = random_mask(13, t=5)
        out, trace = augment_traced(mask, "inference", AugmentConfig(),
                                    np.random.default_rng(0))
        spec = GridSpec(trace.block_h, trace.block_w, 0, 0)
        for t in range(mask.frames):
            single = grid_augment(MaskSequence(mask.data[t:t + 1]), spec)
            assert np.array_equal(out.data[t], single.data[0])

    def test_bbox_branch_probability(self):
        cfg = AugmentConfig(bbox_prob=1.0)
        mask = random_mask(3)
        out, trace = augment_traced(mask, "train", cfg, np.random.default_rng(0))
        assert trace.branch == "bbox"
        assert np.array_equal(out.data, bbox_augment(mask).data)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            AugmentConfig(bbox_prob=1.5)
        with pytest.raises(ConfigError):
            AugmentConfig(train_block_min=10, train_block_max=5)
