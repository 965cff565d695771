"""Flow-matching training of the toy denoiser with subject-region reweighting.

The objective is rectified-flow velocity matching: for data x0 and noise n,
x_t = (1-t) x0 + t n and the network regresses n - x0. Squared error is
reweighted inside the subject mask by the inverse subject fraction, so small
subjects contribute as much learning signal as the background; the reference
frame is excluded from every count and sum.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from .codec import (
    LATENT_CHANNELS,
    LatentBlock,
    downsample_mask,
    encode,
    encode_reference,
)
from .core import (
    MaskSequence,
    PoseSequence,
    ReferenceImage,
    VideoClip,
    extract_reference,
    make_agnostic,
)
from .denoiser import DenoiserConfig, SwapDenoiser
from .errors import ConfigError, EmptyMaskError, ShapeError
from .fusion import FusionConfig, FusedInput, assemble
from .mask_augment import AugmentConfig, augment


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 4
    lr: float = 3e-4
    reweight_lambda: float = 1.0
    ref_scale_min: float = 0.7
    ref_scale_max: float = 1.3
    ref_rotate_deg: float = 15.0
    ref_flip_prob: float = 0.5
    ref_brightness: float = 0.2
    trainable: str = "all"  # or "self_attention"
    seed: int = 0

    def __post_init__(self):
        if self.reweight_lambda < 0:
            raise ConfigError("reweight_lambda must be >= 0")
        if not (0 < self.ref_scale_min <= self.ref_scale_max):
            raise ConfigError("reference scale range must be positive and ordered")
        if self.trainable not in ("all", "self_attention"):
            raise ConfigError(f"unknown trainable mode {self.trainable!r}")


class TrainExample(NamedTuple):
    clip: VideoClip
    mask: MaskSequence
    pose: Optional[PoseSequence]


@dataclass
class LossBreakdown:
    """Eq-style decomposition of one training loss evaluation."""

    final: Tensor  # scalar, graph-attached
    per_element: Tensor  # squared error per element, (B, F, 768, h, w)
    reweighted: float  # amplified subject term, pre-lambda, mean-normalized
    element_count: int  # video elements counted (reference frame excluded)
    subject_element_count: int

    @property
    def value(self) -> float:
        return float(self.final.detach())


def flow_target(x0: Tensor, noise: Tensor, t: Tensor) -> tuple[Tensor, Tensor]:
    """Linear interpolation point and its velocity target.

    ``t`` has one entry per batch element; 0 gives the data, 1 gives noise.
    """
    if x0.shape != noise.shape:
        raise ShapeError(f"noise shape {tuple(noise.shape)} != data {tuple(x0.shape)}")
    tb = t.reshape(-1, *([1] * (x0.ndim - 1))).to(x0.dtype)
    x_t = (1 - tb) * x0 + tb * noise
    return x_t, noise - x0


def reweighted_loss(per_element: Tensor, mask_latent: Tensor, loss_mask: np.ndarray,
                    reweight_lambda: float) -> LossBreakdown:
    """Combine per-element losses with inverse-subject-fraction amplification.

    ``per_element`` covers all fused frames (B, F, 768, h, w); ``loss_mask``
    selects the video frames. The (B, f', 4, h, w) mask latent is broadcast
    onto latent cells through the codec channel layout (channel index
    (c, j, dy, dx) takes the mask's slot j), and subject elements are counted
    after that broadcast. An empty subject region degrades to the plain mean.
    """
    if reweight_lambda < 0:
        raise ConfigError("reweight_lambda must be >= 0")
    keep = np.asarray(loss_mask, dtype=bool)
    vid = per_element[:, torch.from_numpy(keep)]
    b, fv, _, h, w = vid.shape
    grouped = vid.reshape(b, fv, 3, 4, 64, h, w)
    m = mask_latent.reshape(b, fv, 1, 4, 1, h, w).to(vid.dtype)
    element_count = vid.numel()
    subject_count = int(mask_latent.sum()) * 3 * 64
    if subject_count == 0:
        final = vid.mean()
        return LossBreakdown(final=final, per_element=per_element, reweighted=0.0,
                             element_count=element_count, subject_element_count=0)
    subject_sum = (grouped * m).sum()
    background_sum = vid.sum() - subject_sum
    amplified = (element_count / subject_count) * subject_sum
    final = (background_sum + reweight_lambda * amplified) / element_count
    return LossBreakdown(final=final, per_element=per_element,
                         reweighted=float(amplified.detach()) / element_count,
                         element_count=element_count,
                         subject_element_count=subject_count)


def loss_from_prediction(pred: Tensor, target: Tensor, mask_latent: Tensor,
                         loss_mask: np.ndarray, reweight_lambda: float) -> LossBreakdown:
    """Squared-error flow loss of a prediction, reweighted and ref-excluded."""
    return reweighted_loss((pred - target) ** 2, mask_latent, loss_mask,
                           reweight_lambda)


# --- reference augmentation ---------------------------------------------------


def apply_reference_params(ref: ReferenceImage, scale: float, rotate_deg: float,
                           flip: bool, brightness: float) -> Optional[ReferenceImage]:
    """Deterministic reference transform; None if the subject vanishes."""
    img = np.asarray(ref.data, dtype=np.float32)
    alpha = ref.alpha if ref.alpha is not None else np.ones(img.shape[1:], np.uint8)
    alpha = np.asarray(alpha, dtype=np.uint8)
    if flip:
        img = img[:, :, ::-1]
        alpha = alpha[:, ::-1]
    if rotate_deg != 0.0 or scale != 1.0:
        h, w = alpha.shape
        side = int(math.ceil(math.hypot(h, w) * scale)) + 2
        cy_in, cx_in = (h - 1) / 2.0, (w - 1) / 2.0
        cy_out = cx_out = (side - 1) / 2.0
        yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
        dy, dx = yy - cy_out, xx - cx_out
        theta = math.radians(rotate_deg)
        src_y = (math.cos(theta) * dy + math.sin(theta) * dx) / scale + cy_in
        src_x = (-math.sin(theta) * dy + math.cos(theta) * dx) / scale + cx_in
        iy = np.rint(src_y).astype(np.int64)
        ix = np.rint(src_x).astype(np.int64)
        inside = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        iy_c, ix_c = iy.clip(0, h - 1), ix.clip(0, w - 1)
        img = np.where(inside[None], img[:, iy_c, ix_c], 0.0).astype(np.float32)
        alpha = np.where(inside, alpha[iy_c, ix_c], 0).astype(np.uint8)
    if brightness != 0.0:
        img = np.clip(img + brightness, 0.0, 1.0) * alpha
    if not alpha.any():
        return None
    ys, xs = np.nonzero(alpha)
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    return ReferenceImage(img[:, y0:y1, x0:x1], alpha=alpha[y0:y1, x0:x1])


def augment_reference(ref: ReferenceImage, cfg: TrainConfig,
                      rng: np.random.Generator) -> ReferenceImage:
    """Random scale/rotate/flip/brightness, resampled if the subject vanishes."""
    for _ in range(100):
        out = apply_reference_params(
            ref,
            scale=float(rng.uniform(cfg.ref_scale_min, cfg.ref_scale_max)),
            rotate_deg=float(rng.uniform(-cfg.ref_rotate_deg, cfg.ref_rotate_deg)),
            flip=bool(rng.random() < cfg.ref_flip_prob),
            brightness=float(rng.uniform(-cfg.ref_brightness, cfg.ref_brightness)),
        )
        if out is not None:
            return out
    return ref


# --- training state and steps -------------------------------------------------


@dataclass
class TrainState:
    model: SwapDenoiser
    optimizer: torch.optim.Optimizer
    cfg: TrainConfig
    aug_cfg: AugmentConfig
    fusion_cfg: FusionConfig
    rng: np.random.Generator
    step: int = 0
    skipped: int = 0


def make_train_state(cfg: TrainConfig, aug_cfg: Optional[AugmentConfig] = None,
                     fusion_cfg: Optional[FusionConfig] = None,
                     denoiser_cfg: Optional[DenoiserConfig] = None) -> TrainState:
    denoiser_cfg = denoiser_cfg or DenoiserConfig(seed=cfg.seed)
    model = SwapDenoiser(denoiser_cfg)
    model.set_trainable(cfg.trainable)
    params = [p for p in model.parameters() if p.requires_grad]
    # Momentum-free adaptive step with a fixed rate.
    optimizer = torch.optim.RMSprop(params, lr=cfg.lr, momentum=0.0)
    return TrainState(
        model=model,
        optimizer=optimizer,
        cfg=cfg,
        aug_cfg=aug_cfg or AugmentConfig(seed=cfg.seed),
        fusion_cfg=fusion_cfg or FusionConfig(),
        rng=np.random.default_rng([cfg.seed, 0x7261]),
    )


def prepare_example(example: TrainExample, state: TrainState
                    ) -> Optional[dict[str, np.ndarray]]:
    """Run the per-sample data path up to the assembled fused input.

    Returns None (and counts a skip) for records with no subject pixels.
    """
    clip, mask, pose = example
    if mask.all_empty():
        state.skipped += 1
        return None
    rng = state.rng
    nonempty = [t for t in range(mask.frames) if not mask.frame_empty(t)]
    frame_i = int(nonempty[int(rng.integers(0, len(nonempty)))])
    ref = extract_reference(clip, mask, frame_i)
    ref = augment_reference(ref, state.cfg, rng)
    aug_mask = augment(mask, "train", state.aug_cfg, rng)
    agnostic = make_agnostic(clip, aug_mask)

    x0 = encode(clip)
    agnostic_lat = encode(agnostic)
    if pose is not None:
        pose_lat = encode(VideoClip(pose.render()))
    else:
        pose_lat = LatentBlock(np.zeros_like(x0.data))
    mask_lat = downsample_mask(aug_mask)
    ref_lat = encode_reference(ref, clip.height, clip.width)

    t = float(rng.uniform(0.0, 1.0))
    noise = rng.standard_normal(x0.data.shape).astype(np.float32)
    x_t = (1 - t) * x0.data + t * noise
    velocity = noise - x0.data

    fused = assemble(LatentBlock(x_t), agnostic_lat, pose_lat, mask_lat, ref_lat,
                     state.fusion_cfg,
                     clean_first=LatentBlock(x0.data[:1]))
    target_ext = np.zeros(
        (fused.tensor.shape[0], LATENT_CHANNELS) + fused.tensor.shape[2:], np.float32
    )
    target_ext[1:] = velocity
    return {
        "fused": fused.tensor,
        "attention": fused.attention_mask,
        "loss_mask": fused.loss_mask,
        "target": target_ext,
        "mask_latent": mask_lat,
        "t": np.float32(t),
    }


def training_step(examples: Sequence[TrainExample], state: TrainState) -> LossBreakdown:
    """One optimizer update over a batch of records."""
    prepared = [p for p in (prepare_example(e, state) for e in examples) if p]
    if not prepared:
        raise EmptyMaskError("every record in the batch had an empty subject")
    fused = torch.from_numpy(np.stack([p["fused"] for p in prepared]))
    target = torch.from_numpy(np.stack([p["target"] for p in prepared]))
    mask_lat = torch.from_numpy(np.stack([p["mask_latent"] for p in prepared]))
    t = torch.from_numpy(np.stack([p["t"] for p in prepared]))
    allowed = torch.from_numpy(prepared[0]["attention"])
    loss_mask = prepared[0]["loss_mask"]

    pred = state.model(fused, t, allowed)
    breakdown = loss_from_prediction(pred, target, mask_lat, loss_mask,
                                     state.cfg.reweight_lambda)
    state.optimizer.zero_grad()
    breakdown.final.backward()
    state.optimizer.step()
    state.step += 1
    return breakdown


def train(examples: Sequence[TrainExample], state: TrainState,
          on_step: Optional[Callable[[int, LossBreakdown], None]] = None
          ) -> list[float]:
    """Run the configured number of steps, sampling batches with replacement."""
    if not examples:
        raise ConfigError("no training examples")
    history = []
    for _ in range(state.cfg.steps):
        idx = state.rng.integers(0, len(examples), size=state.cfg.batch)
        batch = [examples[int(i)] for i in idx]
        breakdown = training_step(batch, state)
        history.append(breakdown.value)
        if on_step is not None:
            on_step(state.step, breakdown)
    return history


# --- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, state: TrainState) -> None:
    from dataclasses import asdict

    from .tensor_io import save_tensor_dict

    tensors = {
        f"model.{k}": v.detach().cpu().numpy()
        for k, v in state.model.state_dict().items()
    }
    meta = {
        "step": state.step,
        "denoiser": asdict(state.model.cfg),
        "train": asdict(state.cfg),
    }
    save_tensor_dict(path, tensors, metadata=meta)


def load_checkpoint(path) -> tuple[SwapDenoiser, dict]:
    from .tensor_io import load_tensor_dict

    tensors, meta = load_tensor_dict(path)
    cfg = DenoiserConfig(**meta["denoiser"])
    model = SwapDenoiser(cfg)
    state_dict = {
        k[len("model."):]: torch.from_numpy(v)
        for k, v in tensors.items() if k.startswith("model.")
    }
    model.load_state_dict(state_dict)
    model.eval()
    return model, meta


# --- numerical verification -----------------------------------------------------


def grad_check(model: SwapDenoiser, fused: FusedInput, t: float,
               target: np.ndarray, mask_latent: np.ndarray,
               reweight_lambda: float = 1.0, eps: float = 1e-4,
               n_coords: int = 64, rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between autograd and central finite differences.

    Runs in float64 on a sampled subset of parameter coordinates; ``eps``
    must lie in [1e-5, 1e-2].
    """
    if not 1e-5 <= eps <= 1e-1:
        raise ConfigError(f"eps {eps} outside supported range")
    rng = rng or np.random.default_rng(0)
    m = copy.deepcopy(model).double()
    m._pos_cache = {}
    fused_t = torch.from_numpy(fused.tensor.astype(np.float64))[None]
    allowed = torch.from_numpy(fused.attention_mask)
    target_t = torch.from_numpy(target.astype(np.float64))[None]
    ml_t = torch.from_numpy(mask_latent.astype(np.float64))[None]
    tt = torch.tensor([t], dtype=torch.float64)

    def loss_value() -> Tensor:
        pred = m(fused_t, tt, allowed)
        return loss_from_prediction(pred, target_t, ml_t, fused.loss_mask,
                                    reweight_lambda).final

    loss = loss_value()
    m.zero_grad()
    loss.backward()

    params = [p for p in m.parameters()]
    sizes = np.array([p.numel() for p in params])
    offsets = np.cumsum(sizes)
    total = int(offsets[-1])
    picks = rng.choice(total, size=min(n_coords, total), replace=False)

    worst = 0.0
    with torch.no_grad():
        for flat in sorted(int(i) for i in picks):
            pi = int(np.searchsorted(offsets, flat, side="right"))
            local = flat - (0 if pi == 0 else int(offsets[pi - 1]))
            p = params[pi]
            view = p.view(-1)
            orig = float(view[local])
            view[local] = orig + eps
            plus = float(loss_value())
            view[local] = orig - eps
            minus = float(loss_value())
            view[local] = orig
            fd = (plus - minus) / (2 * eps)
            analytic = float(p.grad.view(-1)[local]) if p.grad is not None else 0.0
            denom = max(abs(analytic), abs(fd), 1e-8)
            worst = max(worst, abs(analytic - fd) / denom)
    return worst
