"""Synthetic scenes with exact ground-truth masks, plus filtering and balancing.

Each scene renders a textured background, an articulated stick figure (whose
joints double as the pose sequence), a garment patch riding on the torso, a
small object held in one hand, and a large static-or-panning block. Every
subject's mask is its own rasterized silhouette, so downstream mask
contracts can be asserted bit-exactly. Records then pass through quality
filtering (area ratio, temporal coverage, motion amplitude) and per-category
down-sampling toward the target ratio.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Keypoint, MaskSequence, PoseSequence, VideoClip
from .errors import ConfigError
from .training import TrainExample

CATEGORIES = ("human", "garment", "small_object", "large_object")


@dataclass(frozen=True)
class SubjectStats:
    area_ratio: float  # mean masked fraction over frames
    coverage: float  # fraction of frames with a nonempty mask
    motion: float  # max consecutive centroid displacement / frame diagonal

    def to_json(self) -> dict:
        return {"area_ratio": self.area_ratio, "coverage": self.coverage,
                "motion": self.motion}


@dataclass
class SubjectRecord:
    record_id: str
    clip_id: str
    category: str
    clip: VideoClip
    mask: MaskSequence
    pose: Optional[PoseSequence] = None
    stats: Optional[SubjectStats] = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ConfigError(f"unknown category {self.category!r}")


@dataclass(frozen=True)
class FilterConfig:
    area_min: float = 0.01
    area_max: float = 0.8
    coverage_min: float = 0.9
    motion_min: float = 0.02
    motion_is_minimum: bool = True  # False flips the comparator (exclude erratic)
    target_ratio: tuple[float, float, float, float] = (1.0, 0.2, 1.0, 1.0)
    ratio_tolerance: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.area_min < self.area_max <= 1.0:
            raise ConfigError("need 0 <= area_min < area_max <= 1")


@dataclass(frozen=True)
class SceneSpec:
    frames: int = 17
    height: int = 64
    width: int = 64
    subjects: tuple[str, ...] = CATEGORIES

    def __post_init__(self):
        if self.frames % 4 != 1:
            raise ConfigError(f"frames must be 1 mod 4, got {self.frames}")
        if not self.subjects:
            raise ConfigError("subject roster is empty")
        for s in self.subjects:
            if s not in CATEGORIES:
                raise ConfigError(f"unknown subject {s!r}")


# --- rasterization helpers ----------------------------------------------------


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    return np.mgrid[0:h, 0:w].astype(np.float64)


def _capsule(yy, xx, y0, x0, y1, x1, r) -> np.ndarray:
    dy, dx = y1 - y0, x1 - x0
    l2 = dy * dy + dx * dx
    if l2 == 0:
        d2 = (yy - y0) ** 2 + (xx - x0) ** 2
    else:
        t = np.clip(((yy - y0) * dy + (xx - x0) * dx) / l2, 0.0, 1.0)
        d2 = (yy - y0 - t * dy) ** 2 + (xx - x0 - t * dx) ** 2
    return d2 <= r * r


def _disk(yy, xx, cy, cx, r) -> np.ndarray:
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _rect(yy, xx, y0, x0, y1, x1) -> np.ndarray:
    return (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)


def _paint(frame: np.ndarray, region: np.ndarray, color: np.ndarray,
           shade: Optional[np.ndarray] = None) -> None:
    for c in range(3):
        val = color[c] if shade is None else color[c] * shade
        frame[c] = np.where(region, val, frame[c])


def _pick_color(rng: np.random.Generator) -> np.ndarray:
    while True:
        c = rng.uniform(0.15, 0.95, size=3)
        if c.max() - c.min() >= 0.2:
            return c


# --- the articulated figure -----------------------------------------------------


def _figure_joints(spec: SceneSpec, rng: np.random.Generator
                   ) -> tuple[list[dict[str, tuple[float, float]]], float]:
    """Per-frame joint positions (y, x) of the walking stick figure."""
    h, w, t_total = spec.height, spec.width, spec.frames
    size = rng.uniform(0.50, 0.65) * h
    base_x = rng.uniform(0.38, 0.62) * w
    amp = rng.uniform(0.06, 0.11) * w
    cycles = rng.uniform(1.0, 2.0)
    phase = rng.uniform(0, 2 * np.pi)
    pelvis_y = 0.56 * h
    frames = []
    for t in range(t_total):
        u = 2 * np.pi * cycles * t / max(1, t_total - 1) + phase
        cx = base_x + amp * np.sin(u)
        swing = 0.45 * np.sin(u)
        neck_y = pelvis_y - 0.32 * size
        sh_y = neck_y + 0.03 * size
        sh_dx = 0.15 * size
        arm, fore = 0.17 * size, 0.17 * size
        leg_u, leg_l = 0.21 * size, 0.21 * size

        def arm_chain(side: float, phase_off: float):
            a1 = side * 0.25 + swing * side
            sx = cx + side * sh_dx
            ey = sh_y + arm * np.cos(a1)
            ex = sx + arm * np.sin(a1)
            a2 = a1 + 0.7 * np.sin(u + phase_off)
            hy = ey + fore * np.cos(a2)
            hx = ex + fore * np.sin(a2)
            return (sh_y, sx), (ey, ex), (hy, hx)

        def leg_chain(side: float):
            a1 = 0.35 * np.sin(u + (0.0 if side > 0 else np.pi))
            hx = cx + side * 0.08 * size
            ky = pelvis_y + leg_u * np.cos(a1)
            kx = hx + leg_u * np.sin(a1)
            a2 = a1 * 0.5
            fy = ky + leg_l * np.cos(a2)
            fx = kx + leg_l * np.sin(a2)
            return (pelvis_y, hx), (ky, kx), (fy, fx)

        l_sh, l_el, l_hand = arm_chain(-1.0, 1.1)
        r_sh, r_el, r_hand = arm_chain(1.0, 2.3)
        _, l_knee, l_foot = leg_chain(-1.0)
        _, r_knee, r_foot = leg_chain(1.0)
        joints = {
            "head": (neck_y - 0.12 * size, cx),
            "neck": (neck_y, cx),
            "l_shoulder": l_sh, "r_shoulder": r_sh,
            "l_elbow": l_el, "r_elbow": r_el,
            "l_hand": l_hand, "r_hand": r_hand,
            "pelvis": (pelvis_y, cx),
            "l_knee": l_knee, "r_knee": r_knee,
            "l_foot": l_foot, "r_foot": r_foot,
        }
        clamped = {
            name: (float(np.clip(y, 1, h - 2)), float(np.clip(x, 1, w - 2)))
            for name, (y, x) in joints.items()
        }
        frames.append(clamped)
    return frames, size


def _render_figure(yy, xx, joints: dict, size: float) -> dict[str, np.ndarray]:
    """Body-part silhouettes for one frame, keyed by paint group."""
    limb_r, leg_r = 0.05 * size, 0.06 * size
    parts = {
        "head": _disk(yy, xx, *joints["head"], 0.10 * size),
        "torso": _capsule(yy, xx, *joints["neck"], *joints["pelvis"], 0.12 * size),
        "arms": np.zeros(yy.shape, bool),
        "legs": np.zeros(yy.shape, bool),
    }
    for a, b in (("l_shoulder", "l_elbow"), ("l_elbow", "l_hand"),
                 ("r_shoulder", "r_elbow"), ("r_elbow", "r_hand")):
        parts["arms"] |= _capsule(yy, xx, *joints[a], *joints[b], limb_r)
    for a, b in (("pelvis", "l_knee"), ("l_knee", "l_foot"),
                 ("pelvis", "r_knee"), ("r_knee", "r_foot")):
        parts["legs"] |= _capsule(yy, xx, *joints[a], *joints[b], leg_r)
    return parts


def generate_scene(seed: int, spec: SceneSpec) -> list[SubjectRecord]:
    """Render one scene and return its subject records (sharing one clip)."""
    rng = np.random.default_rng([seed, 0x5CE])
    t_total, h, w = spec.frames, spec.height, spec.width
    yy, xx = _grid(h, w)
    clip_id = f"scene{seed:06d}"

    # Background: smooth static plaid, one phase per channel.
    freq_y = rng.uniform(0.5, 1.5)
    freq_x = rng.uniform(0.5, 1.5)
    bg = np.zeros((3, h, w), np.float32)
    for c in range(3):
        ph = rng.uniform(0, 2 * np.pi)
        bg[c] = 0.45 + 0.18 * np.sin(2 * np.pi * freq_y * yy / h + ph) \
            + 0.12 * np.cos(2 * np.pi * freq_x * xx / w + ph * 0.7)
    frames_px = np.repeat(bg[None], t_total, axis=0).astype(np.float32)

    masks = {name: np.zeros((t_total, h, w), np.uint8) for name in spec.subjects}

    # Large object: panning block behind the figure.
    if "large_object" in spec.subjects:
        oh = int(rng.uniform(0.25, 0.42) * h)
        ow = int(rng.uniform(0.22, 0.38) * w)
        oy = int(rng.uniform(2, h - oh - 2))
        static = rng.random() < 0.2
        speed = 0.0 if static else float(rng.choice([-1, 1]) * rng.uniform(2.0, 3.0))
        span = abs(speed) * (t_total - 1)
        if span > w - ow - 4:
            speed = np.sign(speed) * (w - ow - 4) / max(1, t_total - 1)
            span = abs(speed) * (t_total - 1)
        ox0 = rng.uniform(2, w - ow - 2 - span) + (span if speed < 0 else 0)
        color = _pick_color(rng)
        shade = 0.8 + 0.2 * (xx % 8 < 4)
        for t in range(t_total):
            x0 = ox0 + speed * t
            region = _rect(yy, xx, oy, x0, oy + oh, x0 + ow)
            _paint(frames_px[t], region, color, shade)
            masks["large_object"][t] = region

    # Human figure plus its pose.
    joint_frames, size = _figure_joints(spec, rng)
    col_skin = np.array([0.85, 0.65, 0.5]) * rng.uniform(0.75, 1.1)
    col_shirt = _pick_color(rng)
    col_pants = _pick_color(rng)
    need_human = "human" in spec.subjects
    garment_boxes = []
    for t in range(t_total):
        joints = joint_frames[t]
        parts = _render_figure(yy, xx, joints, size)
        silhouette = parts["head"] | parts["torso"] | parts["arms"] | parts["legs"]
        _paint(frames_px[t], parts["legs"], np.clip(col_pants, 0, 1))
        _paint(frames_px[t], parts["torso"], np.clip(col_shirt, 0, 1))
        _paint(frames_px[t], parts["arms"], np.clip(col_shirt * 0.85, 0, 1))
        _paint(frames_px[t], parts["head"], np.clip(col_skin, 0, 1))
        if need_human:
            masks["human"][t] = silhouette
        ny, nx = joints["neck"]
        py, _ = joints["pelvis"]
        garment_boxes.append((ny + 0.04 * size, py + 0.02 * size, joints["pelvis"][1]))

    # Garment: striped panel over the torso, tracking the sway.
    if "garment" in spec.subjects:
        g_col = _pick_color(rng)
        half_w = 0.16 * size
        stripes = 0.78 + 0.22 * (np.sin(2 * np.pi * yy / 6.0) > 0)
        for t in range(t_total):
            y0, y1, cx = garment_boxes[t]
            region = _rect(yy, xx, y0, cx - half_w, y1, cx + half_w)
            _paint(frames_px[t], region, np.clip(g_col, 0, 1), stripes)
            masks["garment"][t] = region

    # Small object: bright disk glued to the right hand.
    if "small_object" in spec.subjects:
        s_col = _pick_color(rng)
        radius = rng.uniform(3.0, 5.5) * h / 64.0
        for t in range(t_total):
            hy, hx = joint_frames[t]["r_hand"]
            region = _disk(yy, xx, hy, hx, radius)
            _paint(frames_px[t], region, np.clip(s_col, 0, 1))
            masks["small_object"][t] = region

    clip = VideoClip(np.clip(frames_px, 0.0, 1.0))
    pose = PoseSequence(
        [
            [Keypoint(name, x=float(x), y=float(y)) for name, (y, x) in jf.items()]
            for jf in joint_frames
        ],
        height=h, width=w,
    )
    records = []
    for category in spec.subjects:
        record = SubjectRecord(
            record_id=f"{clip_id}:{category}",
            clip_id=clip_id,
            category=category,
            clip=clip,
            mask=MaskSequence(masks[category]),
            pose=pose if category == "human" else None,
        )
        record.stats = compute_stats(record)
        records.append(record)
    return records


# --- stats, filtering, balancing -------------------------------------------------


def compute_stats(record: SubjectRecord) -> SubjectStats:
    mask = record.mask
    per_frame = mask.data.reshape(mask.frames, -1)
    area_ratio = float(per_frame.mean(axis=1).mean())
    nonempty = per_frame.any(axis=1)
    coverage = float(nonempty.mean())
    diagonal = float(np.hypot(mask.height, mask.width))
    centroids = np.full((mask.frames, 2), np.nan)
    for t in np.nonzero(nonempty)[0]:
        ys, xs = np.nonzero(mask.data[t])
        centroids[t] = (ys.mean(), xs.mean())
    motion = 0.0
    for t in range(mask.frames - 1):
        if nonempty[t] and nonempty[t + 1]:
            step = float(np.hypot(*(centroids[t + 1] - centroids[t])))
            motion = max(motion, step / diagonal)
    return SubjectStats(area_ratio, coverage, min(1.0, motion))


def filter_records(records: Sequence[SubjectRecord], cfg: FilterConfig
                   ) -> tuple[list[SubjectRecord], list[tuple[SubjectRecord, str]]]:
    """Partition records into (kept, rejected-with-first-failing-criterion)."""
    kept, rejected = [], []
    for r in records:
        stats = r.stats or compute_stats(r)
        if not cfg.area_min <= stats.area_ratio <= cfg.area_max:
            rejected.append((r, "area"))
        elif stats.coverage < cfg.coverage_min:
            rejected.append((r, "coverage"))
        elif (stats.motion < cfg.motion_min) == cfg.motion_is_minimum:
            rejected.append((r, "motion"))
        else:
            kept.append(r)
    return kept, rejected


@dataclass
class BalanceResult:
    records: list[SubjectRecord]
    counts: dict[str, int]
    targets: dict[str, float]
    infeasible: bool


def balance(records: Sequence[SubjectRecord], cfg: FilterConfig,
            rng: np.random.Generator) -> BalanceResult:
    """Down-sample categories toward the target ratio.

    The scale anchor is the scarcest nonempty category relative to its ratio
    share; categories are never up-sampled. If some category cannot reach
    within the tolerance of its target (for example it is empty), the result
    is flagged infeasible and holds the closest achievable subset.
    """
    by_cat: dict[str, list[int]] = {c: [] for c in CATEGORIES}
    for i, r in enumerate(records):
        by_cat[r.category].append(i)
    ratio = dict(zip(CATEGORIES, cfg.target_ratio))
    scales = [len(by_cat[c]) / ratio[c]
              for c in CATEGORIES if ratio[c] > 0 and by_cat[c]]
    if not scales:
        return BalanceResult([], {c: 0 for c in CATEGORIES},
                             {c: 0.0 for c in CATEGORIES}, infeasible=True)
    scale = min(scales)
    targets = {c: scale * ratio[c] for c in CATEGORIES}
    chosen: list[int] = []
    counts = {}
    infeasible = False
    for c in CATEGORIES:
        want = int(round(targets[c]))
        have = by_cat[c]
        take = min(len(have), want)
        counts[c] = take
        # Within tolerance of the target, allowing half-a-record rounding slack.
        if take + 0.5 < (1.0 - cfg.ratio_tolerance) * targets[c]:
            infeasible = True
        if take == len(have):
            chosen.extend(have)
        else:
            order = rng.permutation(len(have))[:take]
            chosen.extend(have[i] for i in sorted(order))
    chosen.sort()
    return BalanceResult([records[i] for i in chosen], counts, targets, infeasible)


def make_train_examples(records: Sequence[SubjectRecord]) -> list[TrainExample]:
    return [TrainExample(r.clip, r.mask, r.pose) for r in records]


# --- manifest IO -----------------------------------------------------------------


def write_manifest(root: str | Path, records: Sequence[SubjectRecord]) -> Path:
    """Write clips/masks/poses plus a JSON-lines manifest; returns its path."""
    from .tensor_io import export_clip, export_mask, export_pose

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    seen_clips = set()
    lines = []
    for r in records:
        clip_dir = f"clips/{r.clip_id}"
        if r.clip_id not in seen_clips:
            export_clip(root / clip_dir, r.clip)
            seen_clips.add(r.clip_id)
        mask_dir = f"masks/{r.record_id.replace(':', '_')}"
        export_mask(root / mask_dir, r.mask)
        pose_file = None
        if r.pose is not None:
            pose_file = f"poses/{r.record_id.replace(':', '_')}.json"
            (root / "poses").mkdir(exist_ok=True)
            export_pose(root / pose_file, r.pose)
        stats = r.stats or compute_stats(r)
        lines.append(json.dumps({
            "record_id": r.record_id,
            "clip_id": r.clip_id,
            "category": r.category,
            "clip_dir": clip_dir,
            "mask_dir": mask_dir,
            "pose_file": pose_file,
            "stats": stats.to_json(),
        }))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(manifest_path: str | Path) -> list[SubjectRecord]:
    from .tensor_io import import_clip, import_mask, import_pose

    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    clip_cache: dict[str, VideoClip] = {}
    records = []
    for line in manifest_path.read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        cid = doc["clip_id"]
        if cid not in clip_cache:
            clip_cache[cid] = import_clip(root / doc["clip_dir"])
        pose = import_pose(root / doc["pose_file"]) if doc.get("pose_file") else None
        stats = SubjectStats(**doc["stats"]) if doc.get("stats") else None
        records.append(SubjectRecord(
            record_id=doc["record_id"],
            clip_id=cid,
            category=doc["category"],
            clip=clip_cache[cid],
            mask=import_mask(root / doc["mask_dir"]),
            pose=pose,
            stats=stats,
        ))
    return records
