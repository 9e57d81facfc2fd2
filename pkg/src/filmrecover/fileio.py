"""On-disk formats: FMAP float maps, 8-bit PNG images and raw HU stacks.

FMAP layout (all little-endian)::

    b"FMAP" | u32 height | u32 width | u32 channels | u8 role
    | ceil(H*W/8) bytes validity bitmap (row-major, MSB first)
    | H*W*C float32 samples (row-major, channel-interleaved)

A raw HU file is one line of JSON (``{"h", "w", "slices", ...}``) terminated
by ``\\n`` followed by ``slices*h*w`` int16 samples.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .imagecore import ImageGrid, MapField, RangeTag, Role

FMAP_MAGIC = b"FMAP"
_HEADER = struct.Struct("<4sIIIB")


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | os.PathLike, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_json(path: str | os.PathLike):
    with open(path, "rb") as fh:
        return json.loads(fh.read())


def encode_fmap(field: MapField) -> bytes:
    h, w, c = field.shape
    bitmap = np.packbits(field.valid.ravel().astype(np.uint8), bitorder="big")
    samples = np.ascontiguousarray(field.data, dtype="<f4")
    return _HEADER.pack(FMAP_MAGIC, h, w, c, int(field.role)) + bitmap.tobytes() + samples.tobytes()


def decode_fmap(payload: bytes, source: str = "<bytes>") -> MapField:
    if len(payload) < _HEADER.size:
        raise FormatError(f"{source}: truncated header")
    magic, h, w, c, role = _HEADER.unpack_from(payload)
    if magic != FMAP_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    try:
        role = Role(role)
    except ValueError:
        raise FormatError(f"{source}: unknown role code {role}") from None
    nbits = (h * w + 7) // 8
    nfloat = h * w * c * 4
    if len(payload) != _HEADER.size + nbits + nfloat:
        raise FormatError(f"{source}: size {len(payload)} does not match {h}x{w}x{c}")
    off = _HEADER.size
    bits = np.frombuffer(payload, np.uint8, nbits, off)
    valid = np.unpackbits(bits, count=h * w, bitorder="big").astype(bool).reshape(h, w)
    data = np.frombuffer(payload, "<f4", h * w * c, off + nbits).reshape(h, w, c)
    return MapField(data.astype(np.float64), role, valid)


def write_fmap(path: str | os.PathLike, field: MapField) -> None:
    atomic_write_bytes(path, encode_fmap(field))


def read_fmap(path: str | os.PathLike) -> MapField:
    with open(path, "rb") as fh:
        return decode_fmap(fh.read(), str(path))


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(data) * 255.0), 0, 255).astype(np.uint8)


def encode_png(img: ImageGrid) -> bytes:
    if img.range_tag is not RangeTag.UNIT:
        raise FormatError("PNG export expects a UNIT image")
    px = to_uint8(img.data)
    if px.shape[2] == 1:
        px = px[:, :, 0]
    elif px.shape[2] == 2:
        raise FormatError("2-channel images have no PNG mode")
    buf = io.BytesIO()
    Image.fromarray(px).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write_png(path: str | os.PathLike, img: ImageGrid) -> None:
    atomic_write_bytes(path, encode_png(img))


def read_png(path: str | os.PathLike) -> ImageGrid:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return ImageGrid(arr)


def write_hu_raw(path: str | os.PathLike, slices, extra: dict | None = None) -> None:
    stack = np.stack([np.asarray(s, dtype=np.int16) for s in slices]) if len(slices) else np.zeros((0, 0, 0), np.int16)
    n, h, w = stack.shape
    header = {"h": int(h), "w": int(w), "slices": int(n)}
    if extra:
        header.update(extra)
    payload = json.dumps(header, sort_keys=True).encode() + b"\n" + stack.astype("<i2").tobytes()
    atomic_write_bytes(path, payload)


def read_hu_raw(path: str | os.PathLike) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as fh:
        payload = fh.read()
    nl = payload.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing JSON header line")
    try:
        header = json.loads(payload[:nl])
        n, h, w = int(header["slices"]), int(header["h"]), int(header["w"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from None
    body = payload[nl + 1:]
    if len(body) != n * h * w * 2:
        raise FormatError(f"{path}: expected {n * h * w * 2} data bytes, found {len(body)}")
    stack = np.frombuffer(body, "<i2").reshape(n, h, w).astype(np.int16)
    return header, [stack[k] for k in range(n)]
