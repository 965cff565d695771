"""Desk-scale swap metrics and a benchmark runner.

Both metrics are fixed, versioned proxies computed on raw pixels:

* background preservation: per-frame PSNR outside the dilated original mask,
  capped at 50 dB and mapped to [0, 1];
* reference appearance: color-histogram intersection blended with
  gradient-orientation-histogram cosine between the reference subject and
  the output subject crop, on mask-weighted pixels.

Scores are comparable only against the same metric version.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import MaskSequence, ReferenceImage, VideoClip
from .errors import EmptyMaskError, ShapeError
from .inference import SwapRequest, box_blur_mask

METRIC_VERSION = "proxy-1"
PSNR_CAP_DB = 50.0
DEFAULT_DILATION_PX = 8
COLOR_BINS = 16
GRADIENT_BINS = 16
FRAME_SAMPLES = 8


def _snap_unit(v: float) -> float:
    """Collapse float dust so identical inputs score exactly 0 or 1."""
    if abs(v - 1.0) < 1e-12:
        return 1.0
    if abs(v) < 1e-12:
        return 0.0
    return float(v)


def psnr(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * np.log10(mse))


def background_preservation(source: VideoClip, output: VideoClip,
                            original_mask: MaskSequence,
                            dilation_px: int = DEFAULT_DILATION_PX) -> Optional[float]:
    """Mean background PSNR mapped to [0, 1]; None when no background exists.

    Background is everything outside the original mask dilated by
    ``dilation_px`` (Chebyshev radius). Frames without background pixels are
    skipped; identical backgrounds score exactly 1.0.
    """
    if source.data.shape != output.data.shape:
        raise ShapeError("source and output dimensions differ")
    if not original_mask.matches(source):
        raise ShapeError("mask does not match clip dimensions")
    dilated = box_blur_mask(original_mask.data, dilation_px) > 0
    scores = []
    for t in range(source.frames):
        bg = ~dilated[t]
        if not bg.any():
            continue
        diff = source.data[t, :, bg] - output.data[t, :, bg]
        scores.append(psnr(float(np.mean(diff ** 2))))
    if not scores:
        return None
    return _snap_unit(float(np.mean(scores)) / PSNR_CAP_DB)


def _color_histogram(image: np.ndarray, weights: np.ndarray) -> np.ndarray:
    hists = []
    for c in range(3):
        h, _ = np.histogram(image[c].ravel(), bins=COLOR_BINS, range=(0.0, 1.0),
                            weights=weights.ravel())
        hists.append(h)
    h = np.concatenate(hists).astype(np.float64)
    total = h.sum()
    return h / total if total > 0 else h


def _gradient_histogram(image: np.ndarray, weights: np.ndarray) -> np.ndarray:
    gray = image.mean(axis=0)
    gy, gx = np.gradient(gray)
    magnitude = np.hypot(gy, gx) * weights
    orientation = np.arctan2(gy, gx)
    h, _ = np.histogram(orientation.ravel(), bins=GRADIENT_BINS,
                        range=(-np.pi, np.pi), weights=magnitude.ravel())
    return h.astype(np.float64)


def _histogram_similarity(ref_img: np.ndarray, ref_w: np.ndarray,
                          out_img: np.ndarray, out_w: np.ndarray) -> float:
    color = float(np.minimum(_color_histogram(ref_img, ref_w),
                             _color_histogram(out_img, out_w)).sum())
    g1 = _gradient_histogram(ref_img, ref_w)
    g2 = _gradient_histogram(out_img, out_w)
    n1, n2 = np.linalg.norm(g1), np.linalg.norm(g2)
    grad = float(g1 @ g2 / (n1 * n2)) if n1 > 0 and n2 > 0 else 0.0
    return _snap_unit(0.5 * _snap_unit(color) + 0.5 * _snap_unit(grad))


def reference_appearance(reference: ReferenceImage, output: VideoClip,
                         output_mask: MaskSequence,
                         frame_samples: int = FRAME_SAMPLES) -> float:
    """Similarity between the reference subject and the output subject crop,
    averaged over sampled nonempty-mask frames."""
    if not output_mask.matches(output):
        raise ShapeError("mask does not match output dimensions")
    nonempty = [t for t in range(output.frames) if not output_mask.frame_empty(t)]
    if not nonempty:
        raise EmptyMaskError("output mask is empty in every frame")
    if len(nonempty) > frame_samples:
        picks = np.linspace(0, len(nonempty) - 1, frame_samples).round().astype(int)
        nonempty = [nonempty[i] for i in picks]
    ref_w = (reference.alpha if reference.alpha is not None
             else np.ones(reference.data.shape[1:], np.uint8)).astype(np.float64)
    sims = []
    for t in nonempty:
        ys, xs = np.nonzero(output_mask.data[t])
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        x0, x1 = int(xs.min()), int(xs.max()) + 1
        crop = output.data[t, :, y0:y1, x0:x1]
        crop_w = output_mask.data[t, y0:y1, x0:x1].astype(np.float64)
        sims.append(_histogram_similarity(reference.data, ref_w, crop, crop_w))
    return _snap_unit(float(np.mean(sims)))


# --- benchmark runner -----------------------------------------------------------


@dataclass
class EvalCase:
    case_id: str
    request: SwapRequest
    ground_truth: Optional[VideoClip] = None  # defaults to the request clip


@dataclass
class CaseResult:
    case_id: str
    background_preservation: Optional[float] = None
    reference_appearance: Optional[float] = None
    seconds: float = 0.0
    error: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "background_preservation": self.background_preservation,
            "reference_appearance": self.reference_appearance,
            "seconds": self.seconds,
            "error": self.error,
        }


@dataclass
class EvalReport:
    cases: list[CaseResult] = field(default_factory=list)
    metric_version: str = METRIC_VERSION
    seconds_total: float = 0.0

    def aggregate(self, name: str) -> Optional[float]:
        values = [getattr(c, name) for c in self.cases
                  if getattr(c, name) is not None and c.error is None]
        return float(np.mean(values)) if values else None

    def to_json(self) -> dict:
        return {
            "metric_version": self.metric_version,
            "metrics": {
                "background_preservation": "mean background PSNR outside the "
                f"dilated original mask, capped at {PSNR_CAP_DB} dB, mapped to [0,1]",
                "reference_appearance": "0.5*color-histogram intersection + "
                "0.5*gradient-orientation cosine on mask-weighted subject pixels",
            },
            "aggregate": {
                "background_preservation": self.aggregate("background_preservation"),
                "reference_appearance": self.aggregate("reference_appearance"),
            },
            "seconds_total": self.seconds_total,
            "cases": [c.to_json() for c in self.cases],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvalReport":
        report = cls(metric_version=doc["metric_version"],
                     seconds_total=doc["seconds_total"])
        for c in doc["cases"]:
            report.cases.append(CaseResult(
                case_id=c["case_id"],
                background_preservation=c["background_preservation"],
                reference_appearance=c["reference_appearance"],
                seconds=c["seconds"],
                error=c["error"],
            ))
        return report

    def to_csv(self) -> str:
        rows = ["case_id,background_preservation,reference_appearance,seconds,error"]
        for c in self.cases:
            rows.append(",".join([
                c.case_id,
                "" if c.background_preservation is None else repr(c.background_preservation),
                "" if c.reference_appearance is None else repr(c.reference_appearance),
                repr(c.seconds),
                c.error or "",
            ]))
        return "\n".join(rows) + "\n"


def run_bench(cases: Sequence[EvalCase],
              swap_fn: Callable[[SwapRequest], VideoClip],
              dilation_px: int = DEFAULT_DILATION_PX,
              frame_samples: int = FRAME_SAMPLES) -> EvalReport:
    """Execute every case, score it, and keep going past per-case failures."""
    report = EvalReport()
    started = time.perf_counter()
    for case in cases:
        result = CaseResult(case_id=case.case_id)
        case_start = time.perf_counter()
        try:
            output = swap_fn(case.request)
            source = case.ground_truth or case.request.clip
            result.background_preservation = background_preservation(
                source, output, case.request.mask, dilation_px)
            result.reference_appearance = reference_appearance(
                case.request.reference, output, case.request.mask,
                frame_samples=frame_samples)
        except Exception as exc:  # per-case isolation is the contract
            result.error = f"{type(exc).__name__}: {exc}"
        result.seconds = time.perf_counter() - case_start
        report.cases.append(result)
    report.seconds_total = time.perf_counter() - started
    return report


def write_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, report.csv and the summary figure; returns paths."""
    from .plotting import eval_figure

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / "report.json",
        "csv": out_dir / "report.csv",
        "figure": out_dir / "report.png",
    }
    paths["json"].write_text(json.dumps(report.to_json(), indent=2))
    paths["csv"].write_text(report.to_csv())
    eval_figure(report, paths["figure"])
    return paths
