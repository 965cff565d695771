import json

import numpy as np
import pytest

from vidswap import EmptyMaskError, MaskSequence, ReferenceImage, VideoClip
from vidswap.core import extract_reference
from vidswap.evalbench import (
    EvalCase,
    EvalReport,
    background_preservation,
    reference_appearance,
    run_bench,
    write_report,
)
from vidswap.inference import SwapRequest

from conftest import block_mask, make_clip


class TestBackgroundPreservation:
    def test_identical_scores_exactly_one(self, rng):
        clip = make_clip(rng, t=3, h=32, w=32)
        mask = block_mask(3, 32, 32, 8, 16, 8, 16)
        assert background_preservation(clip, clip, mask) == 1.0

    def test_uniform_shift_closed_form(self):
        # +0.1 error outside the mask: PSNR = -10 log10(0.01) = 20 dB -> 0.4
        src = VideoClip(np.full((2, 3, 32, 32), 0.4, np.float32))
        mask = block_mask(2, 32, 32, 0, 8, 0, 8)
        out_data = src.data.copy()
        from vidswap.inference import box_blur_mask
        dilated = box_blur_mask(mask.data, 8) > 0
        out_data[:, :, ~dilated[0]] += 0.1
        score = background_preservation(src, VideoClip(out_data), mask)
        assert abs(score - 0.4) < 1e-6  # float32 pixel arithmetic

    def test_full_frame_mask_skipped(self, rng):
        clip = make_clip(rng, t=2, h=16, w=16)
        mask = MaskSequence(np.ones((2, 16, 16), np.uint8))
        assert background_preservation(clip, clip, mask) is None

    def test_monotone_in_perturbation(self, rng):
        clip = make_clip(rng, t=1, h=32, w=32)
        mask = block_mask(1, 32, 32, 12, 20, 12, 20)
        scores = []
        for shift in (0.02, 0.05, 0.1, 0.2):
            out = VideoClip(np.clip(clip.data * (1 - shift) + shift * 0.5, 0, 1))
            scores.append(background_preservation(clip, out, mask))
        assert all(a >= b for a, b in zip(scores, scores[1:]))


class TestReferenceAppearance:
    def textured_ref(self):
        img = np.zeros((3, 16, 16), np.float32)
        img[0] = np.linspace(0, 1, 16)[None, :]
        img[1] = np.linspace(0, 1, 16)[:, None]
        img[2] = 0.3
        return ReferenceImage(img, alpha=np.ones((16, 16), np.uint8))

    def test_self_similarity_is_one(self):
        ref = self.textured_ref()
        frame = np.zeros((1, 3, 32, 32), np.float32)
        frame[0, :, 8:24, 8:24] = ref.data
        mask = block_mask(1, 32, 32, 8, 24, 8, 24)
        score = reference_appearance(ref, VideoClip(frame), mask)
        assert score == 1.0

    def test_rotation_hurts_gradient_not_color(self):
        ref = self.textured_ref()
        rotated = np.rot90(ref.data, k=1, axes=(1, 2)).copy()
        frame = np.zeros((1, 3, 32, 32), np.float32)
        frame[0, :, 8:24, 8:24] = rotated
        mask = block_mask(1, 32, 32, 8, 24, 8, 24)
        from vidswap.evalbench import _color_histogram
        ones = np.ones((16, 16), np.float64)
        assert np.allclose(_color_histogram(ref.data, ones),
                           _color_histogram(rotated, ones))
        score = reference_appearance(ref, VideoClip(frame), mask)
        assert score < 1.0

    def test_uniform_gray_scores_lowest(self):
        ref = self.textured_ref()
        mask = block_mask(1, 32, 32, 8, 24, 8, 24)

        def frame_with(patch):
            f = np.zeros((1, 3, 32, 32), np.float32)
            f[0, :, 8:24, 8:24] = patch
            return VideoClip(f)

        probes = {
            "self": ref.data,
            "rot90": np.rot90(ref.data, 1, (1, 2)).copy(),
            "noise": np.random.default_rng(0).random((3, 16, 16)).astype(np.float32),
            "gray": np.full((3, 16, 16), 0.5, np.float32),
        }
        scores = {k: reference_appearance(ref, frame_with(v), mask)
                  for k, v in probes.items()}
        assert min(scores, key=scores.get) == "gray"

    def test_empty_mask_everywhere_raises(self, rng):
        clip = make_clip(rng, t=2, h=16, w=16)
        with pytest.raises(EmptyMaskError):
            reference_appearance(self.textured_ref(), clip,
                                 MaskSequence(np.zeros((2, 16, 16), np.uint8)))


class TestRunBench:
    def make_cases(self, n=4):
        cases = []
        for i in range(n):
            rng = np.random.default_rng(i)
            clip = make_clip(rng, t=5, h=32, w=32)
            mask = block_mask(5, 32, 32, 8, 20, 8, 20)
            cases.append(EvalCase(
                case_id=f"case{i}",
                request=SwapRequest(clip=clip, mask=mask,
                                    reference=extract_reference(clip, mask, 0),
                                    steps=1, seed=i)))
        return cases

    def test_identity_stub_scores_background_one(self):
        cases = self.make_cases()
        report = run_bench(cases, swap_fn=lambda req: req.clip)
        assert len(report.cases) == len(cases)
        assert all(c.background_preservation == 1.0 for c in report.cases)

    def test_aggregate_is_exact_mean(self):
        cases = self.make_cases()
        report = run_bench(cases, swap_fn=lambda req: req.clip)
        values = [c.reference_appearance for c in report.cases]
        assert abs(report.aggregate("reference_appearance") - np.mean(values)) < 1e-9

    def test_per_case_failure_recorded_and_run_continues(self):
        cases = self.make_cases()

        def flaky(req):
            if req.seed == 1:
                raise RuntimeError("synthetic failure")
            return req.clip

        report = run_bench(cases, swap_fn=flaky)
        assert len(report.cases) == 4
        assert report.cases[1].error and "synthetic failure" in report.cases[1].error
        assert report.cases[0].error is None
        assert report.aggregate("background_preservation") == 1.0  # failures excluded

    def test_report_roundtrip_and_files(self, tmp_path):
        report = run_bench(self.make_cases(2), swap_fn=lambda req: req.clip)
        doc = report.to_json()
        again = EvalReport.from_json(json.loads(json.dumps(doc)))
        assert again.to_json() == doc  # lossless serialization
        paths = write_report(report, tmp_path)
        assert paths["json"].exists() and paths["csv"].exists()
        assert paths["figure"].exists() and paths["figure"].stat().st_size > 0
        header = paths["csv"].read_text().splitlines()[0]
        assert header.startswith("case_id,background_preservation")
