import json

import numpy as np
import pytest

from filmrecover import fileio
from filmrecover.imagecore import ImageGrid, MapField, Role


def _uv(rng, h=5, w=7):
    valid = rng.random((h, w)) > 0.3
    return MapField(rng.random((h, w, 2)), Role.UV, valid)


def test_fmap_roundtrip_preserves_role_validity_and_float32(rng):
    f = _uv(rng)
    back = fileio.decode_fmap(fileio.encode_fmap(f))
    assert back.role is Role.UV
    assert np.array_equal(back.valid, f.valid)
    assert np.array_equal(back.data, f.data.astype(np.float32).astype(np.float64))


def test_fmap_header_layout(rng):
    f = _uv(rng, 3, 4)
    raw = fileio.encode_fmap(f)
    assert raw[:4] == b"FMAP"
    h, w, c, role = np.frombuffer(raw[4:17], dtype=np.uint8)[[0, 4, 8, 12]]
    assert (h, w, c, role) == (3, 4, 2, int(Role.UV))
    # Validity bitmap is MSB-first.
    bits = np.unpackbits(np.frombuffer(raw[17:19], np.uint8), bitorder="big")[:12]
    assert np.array_equal(bits.astype(bool), f.valid.ravel())
    assert len(raw) == 17 + 2 + 3 * 4 * 2 * 4


def test_fmap_bad_magic(rng):
    raw = bytearray(fileio.encode_fmap(_uv(rng)))
    raw[:4] = b"XMAP"
    with pytest.raises(fileio.FormatError, match="bad magic"):
        fileio.decode_fmap(bytes(raw))


def test_fmap_truncated(rng):
    raw = fileio.encode_fmap(_uv(rng))
    with pytest.raises(fileio.FormatError):
        fileio.decode_fmap(raw[:-3])
    with pytest.raises(fileio.FormatError):
        fileio.decode_fmap(raw[:5])


def test_fmap_file_roundtrip(tmp_path, rng):
    f = MapField(1.0 + rng.random((4, 4)), Role.DEPTH)
    fileio.write_fmap(tmp_path / "d.fmap", f)
    assert np.allclose(fileio.read_fmap(tmp_path / "d.fmap").data, f.data, atol=1e-6)
    assert not list(tmp_path.glob("*.tmp*"))


def test_png_roundtrip_gray_and_rgb(tmp_path, rng):
    for c in (1, 3):
        img = ImageGrid(np.round(rng.random((6, 5, c)) * 255) / 255)
        fileio.write_png(tmp_path / f"i{c}.png", img)
        back = fileio.read_png(tmp_path / f"i{c}.png")
        assert back.shape == img.shape
        assert np.allclose(back.data, img.data)


def test_png_bytes_deterministic(rng):
    img = ImageGrid(rng.random((8, 8)))
    assert fileio.encode_png(img) == fileio.encode_png(img)


def test_hu_raw_roundtrip(tmp_path):
    slices = [np.arange(12, dtype=np.int16).reshape(3, 4) - 1024, np.full((3, 4), 3071, np.int16)]
    fileio.write_hu_raw(tmp_path / "v.raw", slices, {"window": {"ww": 80, "wl": 40}})
    header, back = fileio.read_hu_raw(tmp_path / "v.raw")
    assert header["window"] == {"ww": 80, "wl": 40}
    assert header["slices"] == 2
    assert all(np.array_equal(a, b) for a, b in zip(slices, back))
    assert back[0].dtype == np.int16


def test_hu_raw_rejects_bad_size(tmp_path):
    fileio.write_hu_raw(tmp_path / "v.raw", [np.zeros((2, 2), np.int16)])
    raw = (tmp_path / "v.raw").read_bytes()
    (tmp_path / "v.raw").write_bytes(raw[:-1])
    with pytest.raises(fileio.FormatError):
        fileio.read_hu_raw(tmp_path / "v.raw")


def test_json_atomic_and_sorted(tmp_path):
    fileio.write_json(tmp_path / "a.json", {"b": 1, "a": 2})
    text = (tmp_path / "a.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": 2, "b": 1}
