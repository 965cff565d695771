"""Bit-exact persistence: the VTEN tensor format, PNG frame folders, pose JSON.

VTEN layout (all integers little-endian):

    bytes 0..3    magic b"VTEN"
    byte  4       format version (currently 1)
    byte  5       dtype code (see DTYPE_CODES)
    byte  6       rank (1..8)
    byte  7       reserved, 0
    8 bytes/dim   dims as uint64
    payload       raw C-order array bytes

``load_tensor(save_tensor(x))`` is bit-identical to ``x`` for every
supported dtype.
"""
from __future__ import annotations

import json
import os
import re
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .core import Keypoint, MaskSequence, PoseSequence, VideoClip
from .errors import ShapeError, TensorFormatError

MAGIC = b"VTEN"
VERSION = 1
MAX_RANK = 8
MAX_DIM = 2**48  # guards against corrupt headers asking for absurd allocations

DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.uint8): 2,
    np.dtype(np.int32): 3,
    np.dtype(np.int64): 4,
    np.dtype(np.bool_): 5,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


def save_tensor(path: str | os.PathLike, tensor: np.ndarray) -> None:
    """Write a tensor to ``path`` in the VTEN format."""
    a = np.ascontiguousarray(tensor)
    if a.dtype not in DTYPE_CODES:
        raise TensorFormatError("bad_dtype", f"unsupported dtype {a.dtype}")
    if not 1 <= a.ndim <= MAX_RANK:
        raise TensorFormatError("bad_rank", f"rank {a.ndim} outside 1..{MAX_RANK}")
    if a.dtype.kind == "f" and not np.isfinite(a).all():
        raise TensorFormatError("nonfinite", "refusing to save non-finite values")
    header = MAGIC + struct.pack(
        "<BBBB", VERSION, DTYPE_CODES[a.dtype], a.ndim, 0
    ) + struct.pack(f"<{a.ndim}Q", *a.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(a.tobytes(order="C"))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read a VTEN file back into a numpy array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise TensorFormatError("truncated", f"{path}: header shorter than 8 bytes")
    if raw[:4] != MAGIC:
        raise TensorFormatError("bad_magic", f"{path}: magic {raw[:4]!r} != {MAGIC!r}")
    version, dtype_code, rank, _ = struct.unpack("<BBBB", raw[4:8])
    if version != VERSION:
        raise TensorFormatError("bad_version", f"{path}: version {version}")
    if dtype_code not in CODE_DTYPES:
        raise TensorFormatError("bad_dtype", f"{path}: dtype code {dtype_code}")
    if not 1 <= rank <= MAX_RANK:
        raise TensorFormatError("bad_rank", f"{path}: rank {rank}")
    dims_end = 8 + 8 * rank
    if len(raw) < dims_end:
        raise TensorFormatError("truncated", f"{path}: header cut off mid-dims")
    dims = struct.unpack(f"<{rank}Q", raw[8:dims_end])
    count = 1
    for d in dims:
        if d > MAX_DIM:
            raise TensorFormatError("dim_overflow", f"{path}: dim {d} > {MAX_DIM}")
        count *= d
        if count > MAX_DIM:
            raise TensorFormatError("dim_overflow", f"{path}: element count overflow")
    dtype = CODE_DTYPES[dtype_code]
    expected = count * dtype.itemsize
    payload = raw[dims_end:]
    if len(payload) != expected:
        raise TensorFormatError(
            "truncated",
            f"{path}: payload {len(payload)} bytes, header promises {expected}",
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save_tensor_dict(directory: str | os.PathLike, tensors: Mapping[str, np.ndarray],
                     metadata: dict | None = None) -> None:
    """Persist a named tensor collection as one VTEN file per entry plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = {}
    for i, (name, tensor) in enumerate(sorted(tensors.items())):
        fname = f"t{i:04d}.vten"
        save_tensor(directory / fname, tensor)
        names[name] = fname
    manifest = {"tensors": names, "metadata": metadata or {}}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_tensor_dict(directory: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    tensors = {
        name: load_tensor(directory / fname)
        for name, fname in manifest["tensors"].items()
    }
    return tensors, manifest.get("metadata", {})


# --- PNG frame folders -------------------------------------------------------

_FRAME_RE = re.compile(r"^(\d+)\.png$")


def _frame_paths(folder: Path) -> list[Path]:
    entries = []
    for p in folder.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            entries.append((int(m.group(1)), p))
    entries.sort()
    return [p for _, p in entries]


def export_clip(folder: str | os.PathLike, clip: VideoClip) -> None:
    """Write a clip as zero-padded numbered PNGs, nearest-integer quantized."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    for t in range(clip.frames):
        frame = np.rint(clip.data[t] * 255.0).astype(np.uint8)
        Image.fromarray(frame.transpose(1, 2, 0)).save(folder / f"{t:05d}.png")


def import_clip(folder: str | os.PathLike) -> VideoClip:
    """Read a PNG frame folder into a clip, dividing by 255."""
    paths = _frame_paths(Path(folder))
    if not paths:
        raise ShapeError(f"no numbered PNG frames in {folder}")
    frames = []
    for p in paths:
        img = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
        frames.append(img.transpose(2, 0, 1))
    return VideoClip(np.stack(frames))


def export_mask(folder: str | os.PathLike, mask: MaskSequence) -> None:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    for t in range(mask.frames):
        Image.fromarray(mask.data[t] * np.uint8(255)).save(folder / f"{t:05d}.png")


def import_mask(folder: str | os.PathLike) -> MaskSequence:
    paths = _frame_paths(Path(folder))
    if not paths:
        raise ShapeError(f"no numbered PNG frames in {folder}")
    frames = [
        (np.asarray(Image.open(p).convert("L")) > 127).astype(np.uint8)
        for p in paths
    ]
    return MaskSequence(np.stack(frames))


def export_reference(path: str | os.PathLike, image: np.ndarray,
                     alpha: np.ndarray | None = None) -> None:
    """Write a reference image (3,h,w in [0,1]) as RGB or RGBA PNG."""
    rgb = np.rint(np.asarray(image) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    if alpha is not None:
        rgba = np.concatenate([rgb, (np.asarray(alpha) * 255).astype(np.uint8)[..., None]], axis=2)
        Image.fromarray(rgba, "RGBA").save(path)
    else:
        Image.fromarray(rgb, "RGB").save(path)


def import_reference(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a reference PNG; returns (image(3,h,w), alpha(h,w) or None)."""
    img = Image.open(path)
    if img.mode == "RGBA":
        arr = np.asarray(img, dtype=np.float32) / 255.0
        return arr[..., :3].transpose(2, 0, 1), (arr[..., 3] > 0.5).astype(np.uint8)
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1), None


# --- Pose JSON sidecar -------------------------------------------------------


def export_pose(path: str | os.PathLike, pose: PoseSequence) -> None:
    doc = {
        "height": pose.height,
        "width": pose.width,
        "frames": [
            [
                {"name": kp.name, "x": kp.x, "y": kp.y, "visible": kp.visible}
                for kp in kps
            ]
            for kps in pose.keypoints
        ],
    }
    Path(path).write_text(json.dumps(doc))


def import_pose(path: str | os.PathLike) -> PoseSequence:
    doc = json.loads(Path(path).read_text())
    frames = [
        [Keypoint(kp["name"], kp["x"], kp["y"], kp["visible"]) for kp in kps]
        for kps in doc["frames"]
    ]
    return PoseSequence(frames, doc["height"], doc["width"])
