"""Toy diffusion transformer over the fused latent input.

Tokens are 2x2 latent patches, frame-major with the reference frame first.
Attention follows the supplied allowed-matrix (video tokens see everything,
reference tokens see only themselves), and time conditioning is per token:
video tokens get the sampler time, reference tokens are pinned to t=0 since
the reference is never noised. That pinning makes the whole reference-token
pipeline constant within a sampling run, so its keys/values can be computed
once and reused across steps (:meth:`SwapDenoiser.prepare_sampling`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .codec import LATENT_CHANNELS
from .errors import ConfigError, ShapeError
from .fusion import FUSED_CHANNELS

REF_TIME = 0.0  # conditioning time assigned to the never-noised reference tokens


@dataclass(frozen=True)
class DenoiserConfig:
    dim: int = 128
    layers: int = 4
    heads: int = 4
    patch: int = 2
    time_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")


def sinusoid(positions: Tensor, dim: int) -> Tensor:
    """Classic sin/cos embedding of scalar positions, shape (..., dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=positions.dtype,
                                          device=positions.device) / max(1, half - 1)
    )
    ang = positions[..., None] * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class Modulation(nn.Module):
    """Adaptive layernorm: scale/shift predicted from per-token conditioning."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False)
        self.proj = nn.Linear(dim, 2 * dim)

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        scale, shift = self.proj(cond).chunk(2, dim=-1)
        return self.norm(x) * (1 + scale) + shift


class Block(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.mod_attn = Modulation(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.attn_out = nn.Linear(dim, dim)
        self.mod_mlp = Modulation(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )

    def _split_heads(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def project_qkv(self, x: Tensor, cond: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        h = self.mod_attn(x, cond)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        return self._split_heads(q), self._split_heads(k), self._split_heads(v)

    def finish(self, x: Tensor, attended: Tensor, cond: Tensor) -> Tensor:
        b, _, n, _ = attended.shape
        merged = attended.transpose(1, 2).reshape(b, n, self.heads * self.head_dim)
        x = x + self.attn_out(merged)
        return x + self.mlp(self.mod_mlp(x, cond))

    def forward(self, x: Tensor, cond: Tensor, allowed: Tensor) -> Tensor:
        q, k, v = self.project_qkv(x, cond)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allowed, float("-inf"))
        attended = torch.softmax(scores, dim=-1) @ v
        return self.finish(x, attended, cond)


@dataclass
class SamplingCache:
    """Reference keys/values and constant token terms, fixed across steps."""

    layer_kv: list[tuple[Tensor, Tensor]]
    video_embed_const: Tensor  # (B, Nv, dim): embed of non-noisy features + bias + pos
    frames: int
    lat_h: int
    lat_w: int


class SwapDenoiser(nn.Module):
    """Velocity-field predictor over the fused (F, 3076, h, w) input."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        p = cfg.patch
        self.in_features = FUSED_CHANNELS * p * p
        self.noisy_features = LATENT_CHANNELS * p * p
        self.out_features = LATENT_CHANNELS * p * p
        self.token_embed = nn.Linear(self.in_features, cfg.dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.dim), nn.SiLU(), nn.Linear(cfg.dim, cfg.dim)
        )
        self.blocks = nn.ModuleList(Block(cfg.dim, cfg.heads) for _ in range(cfg.layers))
        # Conditioned final norm: the output scale must be able to follow t.
        self.final_norm = Modulation(cfg.dim)
        self.final_proj = nn.Linear(cfg.dim, self.out_features)
        # Time-gated elementwise skip from the noisy input to the prediction.
        # The velocity (noise - x0) = (x_t - x0)/t is an amplified copy of the
        # token's own noisy features; the token width cannot carry all of them
        # through the embedding, so the skip supplies the copy and the
        # transformer only has to produce the content term.
        self.skip_gate = nn.Linear(cfg.dim, 1)
        self._pos_cache: dict = {}
        self._init_weights(cfg.seed)

    def _init_weights(self, seed: int) -> None:
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    nn.init.xavier_uniform_(module.weight)
                    nn.init.zeros_(module.bias)
            # Small but nonzero output scale: predictions start near zero while
            # keeping input-to-output sensitivity measurable at init.
            nn.init.normal_(self.final_proj.weight, std=0.02)
            nn.init.zeros_(self.skip_gate.weight)
            nn.init.zeros_(self.skip_gate.bias)

    def set_trainable(self, mode: str) -> None:
        """Restrict learnable parameters: "all" or "self_attention"."""
        if mode not in ("all", "self_attention"):
            raise ConfigError(f"unknown trainable mode {mode!r}")
        for p in self.parameters():
            p.requires_grad_(mode == "all")
        if mode == "self_attention":
            for block in self.blocks:
                for p in block.qkv.parameters():
                    p.requires_grad_(True)
                for p in block.attn_out.parameters():
                    p.requires_grad_(True)

    # --- token plumbing -------------------------------------------------

    def patchify(self, fused: Tensor) -> Tensor:
        b, f, c, h, w = fused.shape
        p = self.cfg.patch
        if h % p or w % p:
            raise ShapeError(f"latent dims {h}x{w} not divisible by patch {p}")
        # pixel_unshuffle emits channel order (c, py, px), the layout the
        # token features are defined in.
        x = nn.functional.pixel_unshuffle(fused.reshape(b * f, c, h, w), p)
        x = x.flatten(2).transpose(1, 2)
        return x.reshape(b, f * (h // p) * (w // p), c * p * p)

    def unpatchify(self, tokens: Tensor, frames: int, h: int, w: int) -> Tensor:
        b = tokens.shape[0]
        p = self.cfg.patch
        x = tokens.reshape(b * frames, (h // p) * (w // p), LATENT_CHANNELS * p * p)
        x = x.transpose(1, 2).reshape(b * frames, LATENT_CHANNELS * p * p,
                                      h // p, w // p)
        x = nn.functional.pixel_shuffle(x, p)
        return x.reshape(b, frames, LATENT_CHANNELS, h, w)

    def positional(self, frames: int, h: int, w: int, dtype, device) -> Tensor:
        """Summed temporal + 2D spatial sin/cos table, (frames*hp*wp, dim).

        The reference frame sits at temporal position -1; video frames count
        from 0, marking the reference as global rather than frame content.
        """
        key = (frames, h, w, dtype, device)
        if key not in self._pos_cache:
            p = self.cfg.patch
            hp, wp = h // p, w // p
            d = self.cfg.dim
            tpos = torch.arange(frames, dtype=torch.float64) - 1.0
            temporal = sinusoid(tpos, d)  # (frames, d)
            rows = sinusoid(torch.arange(hp, dtype=torch.float64), d // 2)
            cols = sinusoid(torch.arange(wp, dtype=torch.float64), d - d // 2)
            spatial = torch.cat(
                [
                    rows[:, None, :].expand(hp, wp, d // 2),
                    cols[None, :, :].expand(hp, wp, d - d // 2),
                ],
                dim=-1,
            ).reshape(hp * wp, d)
            full = (temporal[:, None, :] + spatial[None, :, :]).reshape(-1, d)
            self._pos_cache[key] = full.to(dtype=dtype, device=device)
        return self._pos_cache[key]

    def token_time(self, t: Tensor, frames: int, tokens_per_frame: int) -> Tensor:
        """Per-token conditioning: sampler time for video tokens, REF_TIME for
        reference tokens."""
        b = t.shape[0]
        t_ref = torch.full_like(t, REF_TIME)
        both = torch.stack([t_ref, t], dim=1)  # (B, 2)
        emb = self.time_mlp(sinusoid(both, self.cfg.time_dim))  # (B, 2, dim)
        reps = torch.tensor([1, max(0, frames - 1)], device=t.device)
        cond = emb.repeat_interleave(reps.clamp(min=0), dim=1)  # (B, frames, dim)
        return cond.repeat_interleave(tokens_per_frame, dim=1)

    # --- full forward -----------------------------------------------------

    def forward(self, fused: Tensor, t: Tensor, allowed: Tensor) -> Tensor:
        """Predict per-frame velocity, shape (B, F, 768, h, w)."""
        if fused.ndim != 5 or fused.shape[2] != FUSED_CHANNELS:
            raise ShapeError(f"fused input must be (B,F,{FUSED_CHANNELS},h,w), "
                             f"got {tuple(fused.shape)}")
        b, f, _, h, w = fused.shape
        p = self.cfg.patch
        tokens = self.patchify(fused)
        x = self.token_embed(tokens)
        x = x + self.positional(f, h, w, x.dtype, x.device)
        cond = self.token_time(t.to(x.dtype), f, (h // p) * (w // p))
        for block in self.blocks:
            x = block(x, cond, allowed)
        out = self.final_proj(self.final_norm(x, cond))
        out = out + self.skip_gate(cond) * tokens[..., : self.noisy_features]
        return self.unpatchify(out, f, h, w)

    # --- cached sampling path ----------------------------------------------

    @torch.no_grad()
    def prepare_sampling(self, fused_const: Tensor) -> SamplingCache:
        """Precompute everything that is constant across sampler steps.

        ``fused_const`` is the fused tensor with the video frames' noisy
        channel group zeroed (frame 0 is complete: its noisy group holds the
        clamped reference latent). Returns per-layer reference keys/values
        and the constant part of the video token embedding.
        """
        b, f, _, h, w = fused_const.shape
        p = self.cfg.patch
        tpf = (h // p) * (w // p)
        tokens = self.patchify(fused_const)
        pos = self.positional(f, h, w, tokens.dtype, tokens.device)

        # Reference tokens attend only to themselves: run their full pipeline.
        x_ref = self.token_embed(tokens[:, :tpf]) + pos[:tpf]
        t_ref = torch.full((b,), REF_TIME, dtype=tokens.dtype, device=tokens.device)
        cond_ref = self.time_mlp(sinusoid(t_ref, self.cfg.time_dim))[:, None, :]
        cond_ref = cond_ref.expand(b, tpf, self.cfg.dim)
        layer_kv = []
        for block in self.blocks:
            q, k, v = block.project_qkv(x_ref, cond_ref)
            layer_kv.append((k, v))
            scores = q @ k.transpose(-2, -1) / math.sqrt(block.head_dim)
            x_ref = block.finish(x_ref, torch.softmax(scores, dim=-1) @ v, cond_ref)

        # Video tokens: the embedding is linear, so split it into the cached
        # contribution of the constant features and the per-step noisy part.
        vid_tokens = tokens[:, tpf:]
        w_const = self.token_embed.weight[:, self.noisy_features:]
        const_embed = vid_tokens[..., self.noisy_features:] @ w_const.T
        const_embed = const_embed + self.token_embed.bias + pos[tpf:]
        return SamplingCache(layer_kv=layer_kv, video_embed_const=const_embed,
                             frames=f, lat_h=h, lat_w=w)

    @torch.no_grad()
    def forward_video(self, noisy: Tensor, t: Tensor, cache: SamplingCache) -> Tensor:
        """Velocity for the video frames only, using cached reference state.

        ``noisy`` is (B, f', 768, h, w); output matches. Video rows attend to
        every token, so no masking is needed here.
        """
        b, fv, _, h, w = noisy.shape
        p = self.cfg.patch
        tpf = (h // p) * (w // p)
        noisy_tokens = self.patchify(noisy)
        w_noisy = self.token_embed.weight[:, : self.noisy_features]
        x = noisy_tokens @ w_noisy.T + cache.video_embed_const
        cond = self.time_mlp(sinusoid(t.to(x.dtype), self.cfg.time_dim))
        cond = cond[:, None, :].expand(b, fv * tpf, self.cfg.dim)
        for block, (k_ref, v_ref) in zip(self.blocks, cache.layer_kv):
            q, k, v = block.project_qkv(x, cond)
            k_all = torch.cat([k_ref, k], dim=2)
            v_all = torch.cat([v_ref, v], dim=2)
            scores = q @ k_all.transpose(-2, -1) / math.sqrt(block.head_dim)
            x = block.finish(x, torch.softmax(scores, dim=-1) @ v_all, cond)
        out = self.final_proj(self.final_norm(x, cond))
        out = out + self.skip_gate(cond) * noisy_tokens
        return self.unpatchify(out, fv, h, w)


def fused_to_torch(tensor: np.ndarray, dtype=torch.float32) -> Tensor:
    """Lift an assembled fused tensor (F,C,h,w) to a batch-1 torch tensor."""
    return torch.from_numpy(np.ascontiguousarray(tensor)).to(dtype)[None]
