"""Video subject swapping toolkit: condition fusion, adaptive mask
augmentation, reweighted flow-matching training, tunnel inference, and a
synthetic data pipeline, exercised end-to-end by a toy diffusion transformer.
"""

__version__ = "0.1.0"

from .core import (
    BBox,
    Keypoint,
    MaskSequence,
    PoseSequence,
    ReferenceImage,
    VideoClip,
    extract_reference,
    make_agnostic,
)
from .codec import CodecSpec, LatentBlock, decode, downsample_mask, encode, encode_reference
from .errors import ConfigError, EmptyMaskError, ShapeError, TensorFormatError, VidswapError
from .fusion import FusedInput, FusionConfig, TokenLayout, assemble, build_attention_mask
from .mask_augment import AugmentConfig, GridSpec, augment, augment_traced
from .tensor_io import load_tensor, save_tensor

__all__ = [
    "BBox",
    "Keypoint",
    "MaskSequence",
    "PoseSequence",
    "ReferenceImage",
    "VideoClip",
    "extract_reference",
    "make_agnostic",
    "CodecSpec",
    "LatentBlock",
    "decode",
    "downsample_mask",
    "encode",
    "encode_reference",
    "ConfigError",
    "EmptyMaskError",
    "ShapeError",
    "TensorFormatError",
    "VidswapError",
    "FusedInput",
    "FusionConfig",
    "TokenLayout",
    "assemble",
    "build_attention_mask",
    "AugmentConfig",
    "GridSpec",
    "augment",
    "augment_traced",
    "load_tensor",
    "save_tensor",
]
