import json
import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from vidswap import MaskSequence, TensorFormatError, load_tensor, save_tensor
from vidswap.core import Keypoint, PoseSequence
from vidswap.tensor_io import (
    export_clip,
    export_mask,
    export_pose,
    export_reference,
    import_clip,
    import_mask,
    import_pose,
    import_reference,
    load_tensor_dict,
    save_tensor_dict,
)

from conftest import make_clip


class TestVten:
    def test_roundtrip_random_tensor(self, tmp_path, rng):
        x = rng.random((5, 3, 64, 64)).astype(np.float32)
        save_tensor(tmp_path / "x.vten", x)
        y = load_tensor(tmp_path / "x.vten")
        assert y.dtype == x.dtype and np.array_equal(y, x)

    @settings(max_examples=30, deadline=None,
              suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(
        seed=st.integers(0, 10_000),
        rank=st.integers(1, 5),
        dtype=st.sampled_from(["float32", "float64", "uint8", "int32", "int64", "bool"]),
    )
    def test_roundtrip_every_dtype_and_rank(self, tmp_path, seed, rank, dtype):
        # distinct filename per draw, so sharing one tmp_path is fine
        r = np.random.default_rng(seed)
        shape = tuple(int(d) for d in r.integers(1, 5, size=rank))
        if dtype in ("float32", "float64"):
            x = r.random(shape).astype(dtype)
        elif dtype == "bool":
            x = r.random(shape) < 0.5
        else:
            x = r.integers(0, 100, size=shape).astype(dtype)
        path = tmp_path / f"t{seed}.vten"
        save_tensor(path, x)
        y = load_tensor(path)
        assert y.dtype == np.dtype(dtype)
        assert np.array_equal(y, x)
        # bit-exact for floats, not just value-equal
        assert y.tobytes() == np.ascontiguousarray(x).tobytes()

    def test_truncated_payload(self, tmp_path):
        header = b"VTEN" + struct.pack("<BBBB", 1, 0, 4, 0) + struct.pack("<4Q", 2, 2, 2, 2)
        p = tmp_path / "trunc.vten"
        p.write_bytes(header)  # zero-length payload, rank-4 header
        with pytest.raises(TensorFormatError) as err:
            load_tensor(p)
        assert err.value.code == "truncated"

    def test_magic_mismatch(self, tmp_path):
        p = tmp_path / "bad.vten"
        p.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(TensorFormatError) as err:
            load_tensor(p)
        assert err.value.code == "bad_magic"

    def test_dim_overflow(self, tmp_path):
        header = b"VTEN" + struct.pack("<BBBB", 1, 0, 1, 0) + struct.pack("<Q", 2**60)
        p = tmp_path / "huge.vten"
        p.write_bytes(header)
        with pytest.raises(TensorFormatError) as err:
            load_tensor(p)
        assert err.value.code == "dim_overflow"

    def test_bad_dtype_code(self, tmp_path):
        header = b"VTEN" + struct.pack("<BBBB", 1, 99, 1, 0) + struct.pack("<Q", 1)
        p = tmp_path / "dt.vten"
        p.write_bytes(header + bytes(4))
        with pytest.raises(TensorFormatError) as err:
            load_tensor(p)
        assert err.value.code == "bad_dtype"

    def test_rejects_nonfinite(self, tmp_path):
        with pytest.raises(TensorFormatError) as err:
            save_tensor(tmp_path / "nan.vten", np.array([np.nan]))
        assert err.value.code == "nonfinite"

    def test_tensor_dict_roundtrip(self, tmp_path, rng):
        tensors = {"a.weight": rng.random((3, 4)).astype(np.float32),
                   "b": np.arange(5, dtype=np.int64)}
        save_tensor_dict(tmp_path / "ckpt", tensors, metadata={"step": 7})
        loaded, meta = load_tensor_dict(tmp_path / "ckpt")
        assert meta == {"step": 7}
        assert set(loaded) == set(tensors)
        for k in tensors:
            assert np.array_equal(loaded[k], tensors[k])


class TestFrameFolders:
    def test_import_counts_frames(self, tmp_path, rng):
        clip = make_clip(rng, t=17, h=64, w=64)
        export_clip(tmp_path / "frames", clip)
        assert len(list((tmp_path / "frames").glob("*.png"))) == 17
        back = import_clip(tmp_path / "frames")
        assert back.frames == 17

    def test_quantized_roundtrip(self, tmp_path, rng):
        clip = make_clip(rng, t=2, h=16, w=16)
        export_clip(tmp_path / "f", clip)
        back = import_clip(tmp_path / "f")
        # nearest-integer quantization: error at most half a level
        assert np.abs(back.data - clip.data).max() <= 0.5 / 255 + 1e-7
        # a second pass is exact (values already on the 1/255 grid)
        export_clip(tmp_path / "g", back)
        again = import_clip(tmp_path / "g")
        assert np.array_equal(again.data, back.data)

    def test_mask_roundtrip_exact(self, tmp_path, rng):
        mask = MaskSequence((rng.random((3, 16, 16)) < 0.3).astype(np.uint8))
        export_mask(tmp_path / "m", mask)
        assert np.array_equal(import_mask(tmp_path / "m").data, mask.data)

    def test_reference_rgba_roundtrip(self, tmp_path, rng):
        img = (rng.integers(0, 256, (3, 8, 8)) / 255.0).astype(np.float32)
        alpha = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        export_reference(tmp_path / "r.png", img, alpha)
        img2, alpha2 = import_reference(tmp_path / "r.png")
        assert np.allclose(img2, img, atol=1e-7)
        assert np.array_equal(alpha2, alpha)


def test_pose_json_roundtrip(tmp_path):
    kps = [
        [Keypoint("head", 3.0, 2.0), Keypoint("neck", 3.5, 4.0, visible=False)],
        [Keypoint("head", 4.0, 2.5), Keypoint("neck", 4.5, 4.5)],
    ]
    pose = PoseSequence(kps, height=16, width=16)
    export_pose(tmp_path / "pose.json", pose)
    back = import_pose(tmp_path / "pose.json")
    assert back.height == 16 and back.frames == 2
    assert back.keypoints == pose.keypoints
    doc = json.loads((tmp_path / "pose.json").read_text())
    assert doc["frames"][0][1]["visible"] is False
