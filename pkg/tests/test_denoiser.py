import numpy as np
import pytest
import torch

from vidswap import ShapeError
from vidswap.codec import LatentBlock, downsample_mask, encode, encode_reference
from vidswap.core import extract_reference, make_agnostic
from vidswap.denoiser import DenoiserConfig, SwapDenoiser, fused_to_torch, sinusoid
from vidswap.fusion import FusionConfig, assemble

from conftest import block_mask, make_clip


@pytest.fixture(scope="module")
def fused_small():
    rng = np.random.default_rng(5)
    clip = make_clip(rng, t=5, h=32, w=32)
    mask = block_mask(5, 32, 32, 8, 20, 8, 24)
    x0 = encode(clip)
    agnostic = encode(make_agnostic(clip, mask))
    pose = LatentBlock(np.zeros_like(x0.data))
    ref = encode_reference(extract_reference(clip, mask, 0), 32, 32)
    return assemble(x0, agnostic, pose, downsample_mask(mask), ref,
                    FusionConfig(), clean_first=LatentBlock(x0.data[:1]))


@pytest.fixture(scope="module")
def model():
    return SwapDenoiser(DenoiserConfig(seed=11))


class TestForward:
    def test_output_matches_noisy_stream_dims(self, fused_small, model):
        ft = fused_to_torch(fused_small.tensor)
        allowed = torch.from_numpy(fused_small.attention_mask)
        out = model(ft, torch.tensor([0.3]), allowed)
        assert tuple(out.shape) == (1, 3, 768, 4, 4)

    def test_deterministic(self, fused_small, model):
        ft = fused_to_torch(fused_small.tensor)
        allowed = torch.from_numpy(fused_small.attention_mask)
        with torch.no_grad():
            a = model(ft, torch.tensor([0.7]), allowed)
            b = model(ft, torch.tensor([0.7]), allowed)
        assert torch.equal(a, b)

    def test_rejects_wrong_channels(self, model):
        with pytest.raises(ShapeError):
            model(torch.zeros(1, 2, 100, 4, 4), torch.tensor([0.5]),
                  torch.ones(2, 2, dtype=torch.bool))

    def test_video_perturbation_leaves_reference_untouched(self, fused_small, model):
        ft = fused_to_torch(fused_small.tensor)
        allowed = torch.from_numpy(fused_small.attention_mask)
        t = torch.tensor([0.4])
        with torch.no_grad():
            base = model(ft, t, allowed)
            bumped = ft.clone()
            bumped[:, 1:, :768] += 0.3
            out = model(bumped, t, allowed)
        assert torch.equal(base[:, 0], out[:, 0])

    def test_reference_perturbation_moves_video_outputs(self, fused_small, model):
        ft = fused_to_torch(fused_small.tensor)
        allowed = torch.from_numpy(fused_small.attention_mask)
        t = torch.tensor([0.4])
        with torch.no_grad():
            base = model(ft, t, allowed)
            bumped = ft.clone()
            bumped[:, 0, :768] += 0.3
            out = model(bumped, t, allowed)
        assert (out[:, 1:] - base[:, 1:]).abs().max() > 1e-6

    def test_reference_tokens_independent_of_time(self, fused_small, model):
        # reference conditioning is pinned, so its outputs ignore the sampler t
        ft = fused_to_torch(fused_small.tensor)
        allowed = torch.from_numpy(fused_small.attention_mask)
        with torch.no_grad():
            a = model(ft, torch.tensor([0.1]), allowed)
            b = model(ft, torch.tensor([0.9]), allowed)
        assert torch.equal(a[:, 0], b[:, 0])
        assert not torch.equal(a[:, 1:], b[:, 1:])


class TestSamplingCache:
    def test_forward_video_matches_full_forward(self, fused_small, model):
        const = fused_small.tensor.copy()
        const[1:, :768] = 0.0
        noisy = np.random.default_rng(0).standard_normal(
            (1, 2, 768, 4, 4)).astype(np.float32)
        full_in = fused_small.tensor.copy()
        full_in[1:, :768] = noisy[0]
        t = torch.tensor([0.42])
        with torch.no_grad():
            cache = model.prepare_sampling(fused_to_torch(const))
            fast = model.forward_video(torch.from_numpy(noisy), t, cache)
            allowed = torch.from_numpy(fused_small.attention_mask)
            slow = model(fused_to_torch(full_in), t, allowed)[:, 1:]
        assert torch.allclose(fast, slow, atol=1e-5)

    def test_cache_reusable_across_steps(self, fused_small, model):
        const = fused_small.tensor.copy()
        const[1:, :768] = 0.0
        with torch.no_grad():
            cache = model.prepare_sampling(fused_to_torch(const))
            x = torch.zeros(1, 2, 768, 4, 4)
            outs = [model.forward_video(x, torch.tensor([t]), cache)
                    for t in (1.0, 0.5)]
        assert not torch.equal(outs[0], outs[1])


class TestConfigAndInit:
    def test_dim_head_divisibility(self):
        from vidswap import ConfigError
        with pytest.raises(ConfigError):
            DenoiserConfig(dim=130, heads=4)

    def test_init_seed_reproducible(self):
        a = SwapDenoiser(DenoiserConfig(seed=3))
        b = SwapDenoiser(DenoiserConfig(seed=3))
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and torch.equal(pa, pb)

    def test_trainable_modes(self):
        m = SwapDenoiser(DenoiserConfig(layers=2))
        m.set_trainable("self_attention")
        trainable = {n for n, p in m.named_parameters() if p.requires_grad}
        assert all(("qkv" in n or "attn_out" in n) for n in trainable)
        assert any("qkv" in n for n in trainable)
        m.set_trainable("all")
        assert all(p.requires_grad for p in m.parameters())

    def test_sinusoid_shape_and_range(self):
        emb = sinusoid(torch.tensor([0.0, 0.5, -1.0]), 32)
        assert emb.shape == (3, 32)
        assert emb.abs().max() <= 1.0
