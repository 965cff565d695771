import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_clip(rng, t=5, h=32, w=32):
    from vidswap import VideoClip

    return VideoClip(rng.random((t, 3, h, w), dtype=np.float32))


def block_mask(t, h, w, y0, y1, x0, x1):
    from vidswap import MaskSequence

    m = np.zeros((t, h, w), np.uint8)
    m[:, y0:y1, x0:x1] = 1
    return MaskSequence(m)
