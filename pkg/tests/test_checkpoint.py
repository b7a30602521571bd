"""Checkpoint archive format: round trips, determinism, corruption."""

import struct

import numpy as np
import pytest

from ctcasr.checkpoint import MAGIC, load_archive, save_archive
from ctcasr.errors import FormatError


@pytest.fixture()
def sample(rng):
    meta = {"epoch": 3, "note": "snapshot with ünïcode"}
    tensors = {
        "conv0.w": rng.standard_normal((4, 1, 3, 3)).astype(np.float32),
        "conv0.b": np.zeros(4, dtype=np.float32),
        "gru.w": rng.standard_normal((6, 2)).astype(np.float64),
    }
    return meta, tensors


class TestRoundTrip:
    def test_exact_values_and_meta(self, tmp_path, sample):
        meta, tensors = sample
        path = tmp_path / "model.ckpt"
        save_archive(path, meta, tensors)
        got_meta, got = load_archive(path)
        assert got_meta == meta
        assert set(got) == set(tensors)
        for name, arr in tensors.items():
            assert got[name].dtype == arr.dtype
            np.testing.assert_array_equal(got[name], arr)

    def test_loaded_tensors_are_writable_copies(self, tmp_path, sample):
        meta, tensors = sample
        path = tmp_path / "model.ckpt"
        save_archive(path, meta, tensors)
        _, got = load_archive(path)
        got["conv0.b"] += 1.0  # must not raise (frombuffer views are read-only)

    def test_byte_determinism(self, tmp_path, sample):
        meta, tensors = sample
        a = tmp_path / "a.ckpt"
        b = tmp_path / "b.ckpt"
        save_archive(a, meta, tensors)
        save_archive(b, dict(meta), {k: v.copy() for k, v in reversed(tensors.items())})
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_non_float_tensors(self, tmp_path):
        with pytest.raises(FormatError):
            save_archive(tmp_path / "x.ckpt", {}, {"idx": np.arange(3)})


class TestCorruption:
    def write(self, tmp_path, sample):
        meta, tensors = sample
        path = tmp_path / "model.ckpt"
        save_archive(path, meta, tensors)
        return path, path.read_bytes()

    def test_wrong_magic(self, tmp_path, sample):
        path, raw = self.write(tmp_path, sample)
        path.write_bytes(b"GARBAGE!" + raw[8:])
        with pytest.raises(FormatError) as err:
            load_archive(path)
        assert err.value.offset == 0

    def test_truncated_header(self, tmp_path, sample):
        path, raw = self.write(tmp_path, sample)
        path.write_bytes(raw[: len(MAGIC) + 4])
        with pytest.raises(FormatError) as err:
            load_archive(path)
        assert err.value.offset == len(MAGIC)

    def test_truncated_index(self, tmp_path, sample):
        path, raw = self.write(tmp_path, sample)
        path.write_bytes(raw[: len(MAGIC) + 8 + 10])
        with pytest.raises(FormatError) as err:
            load_archive(path)
        assert err.value.offset == len(MAGIC) + 8

    def test_truncated_payload(self, tmp_path, sample):
        path, raw = self.write(tmp_path, sample)
        path.write_bytes(raw[:-5])
        with pytest.raises(FormatError) as err:
            load_archive(path)
        assert "runs past end of file" in str(err.value)
        assert err.value.offset is not None

    def test_corrupt_json(self, tmp_path, sample):
        path, raw = self.write(tmp_path, sample)
        (doc_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
        start = len(MAGIC) + 8
        path.write_bytes(raw[:start] + b"{" * doc_len + raw[start + doc_len :])
        with pytest.raises(FormatError) as err:
            load_archive(path)
        assert "bad index JSON" in str(err.value)

    def test_unknown_dtype_code(self, tmp_path, sample):
        path, raw = self.write(tmp_path, sample)
        patched = raw.replace(b'"dtype": "f64"', b'"dtype": "f16"', 1)
        assert patched != raw
        path.write_bytes(patched)
        with pytest.raises(FormatError) as err:
            load_archive(path)
        assert "unknown dtype code" in str(err.value)
