"""Image and map containers shared by every stage of the pipeline.

Coordinate convention used throughout the package: pixel ``(i, j)`` (row,
column) samples the continuous location ``(x, y) = (j + 0.5, i + 0.5)``.
UV ``(0, 0)`` is the top-left corner of the texture, ``u`` runs along the
width and ``v`` along the height.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

RANGE_SLACK = 1e-6
UV_SLACK = 1e-3
NORMAL_TOL = 1e-4


class ContractError(ValueError):
    """Raised when an operation receives a container that violates its precondition."""


class RangeTag(enum.Enum):
    UNIT = "UNIT"
    SIGNED_UNIT = "SIGNED_UNIT"

    @property
    def bounds(self) -> tuple[float, float]:
        return (0.0, 1.0) if self is RangeTag.UNIT else (-1.0, 1.0)


class Role(enum.IntEnum):
    """Map roles; the integer value is the FMAP role byte."""

    UV = 0
    DEFORM = 1
    BACKWARD = 2
    COORD3D = 3
    NORMAL = 4
    DEPTH = 5
    ALBEDO = 6
    MASK = 7


ROLE_CHANNELS = {Role.UV: 2, Role.DEFORM: 2, Role.BACKWARD: 2, Role.NORMAL: 3, Role.DEPTH: 1, Role.MASK: 1}


class _ClampCounter:
    """Process-wide tally of samples clamped at container construction."""

    def __init__(self) -> None:
        self.count = 0

    def add(self, n: int) -> None:
        if n:
            self.count += int(n)
            logger.debug("clamped %d out-of-range samples", n)

    def reset(self) -> int:
        n, self.count = self.count, 0
        return n


clamp_warnings = _ClampCounter()


def _as_hwc(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ContractError(f"expected an HxW or HxWxC array, got shape {arr.shape}")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """Floating image, ``data`` shaped (H, W, C), samples inside ``range_tag``."""

    data: np.ndarray
    range_tag: RangeTag = RangeTag.UNIT

    def __post_init__(self) -> None:
        arr = _as_hwc(self.data)
        if not 1 <= arr.shape[2] <= 3:
            raise ContractError(f"ImageGrid supports 1-3 channels, got {arr.shape[2]}")
        if not np.all(np.isfinite(arr)):
            raise ContractError("ImageGrid samples must be finite")
        lo, hi = self.range_tag.bounds
        outside = (arr < lo - RANGE_SLACK) | (arr > hi + RANGE_SLACK)
        clamp_warnings.add(np.count_nonzero(outside))
        arr = np.clip(arr, lo, hi)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def gray(self) -> np.ndarray:
        """Channel mean as an (H, W) array."""
        return self.data.mean(axis=2)

    def with_data(self, data) -> "ImageGrid":
        return ImageGrid(data, self.range_tag)


@dataclass(frozen=True, eq=False)
class MapField:
    """Per-pixel map with a role tag and a validity mask.

    Construction enforces the role invariants. Samples that overshoot a
    bounded role by rendering/interpolation epsilon are clamped and counted;
    UV samples further than ``UV_SLACK`` outside [0, 1] are marked invalid
    instead, since clamping them would invent wrong correspondences.
    """

    data: np.ndarray
    role: Role
    valid: np.ndarray | None = None

    def __post_init__(self) -> None:
        role = Role(self.role)
        arr = _as_hwc(self.data).copy()
        h, w, c = arr.shape
        want = ROLE_CHANNELS.get(role)
        if want is not None and c != want:
            raise ContractError(f"role {role.name} needs {want} channels, got {c}")
        if role is Role.ALBEDO and c not in (1, 3):
            raise ContractError(f"ALBEDO needs 1 or 3 channels, got {c}")
        if role is Role.COORD3D and c != 3:
            raise ContractError(f"COORD3D needs 3 channels, got {c}")
        valid = np.ones((h, w), bool) if self.valid is None else np.asarray(self.valid, bool).copy()
        if valid.shape != (h, w):
            raise ContractError(f"valid mask shape {valid.shape} != {(h, w)}")
        valid &= np.all(np.isfinite(arr), axis=2)

        if role is Role.UV:
            out = np.any((arr < -UV_SLACK) | (arr > 1 + UV_SLACK), axis=2)
            valid &= ~out
            near = valid[:, :, None] & ((arr < 0) | (arr > 1))
            clamp_warnings.add(np.count_nonzero(near))
            arr = np.where(valid[:, :, None], np.clip(arr, 0.0, 1.0), arr)
        elif role is Role.ALBEDO:
            outside = (arr < -RANGE_SLACK) | (arr > 1 + RANGE_SLACK)
            clamp_warnings.add(np.count_nonzero(outside & valid[:, :, None]))
            arr = np.clip(np.nan_to_num(arr), 0.0, 1.0)
        elif role is Role.MASK:
            if not np.all(np.isin(arr, (0.0, 1.0))):
                raise ContractError("MASK samples must be 0 or 1")
            valid = np.ones((h, w), bool)
        elif role is Role.NORMAL:
            norms = np.linalg.norm(arr, axis=2)
            bad = valid & (np.abs(norms - 1.0) > NORMAL_TOL)
            if bad.any():
                raise ContractError(f"{np.count_nonzero(bad)} valid normals are not unit length")
        elif role is Role.DEPTH:
            if np.any(arr[valid, 0] <= 0):
                raise ContractError("valid DEPTH samples must be positive")

        object.__setattr__(self, "role", role)
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "valid", _freeze(valid))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def mask_array(self) -> np.ndarray:
        """Boolean (H, W) view of a MASK field."""
        if self.role is not Role.MASK:
            raise ContractError(f"expected a MASK field, got {self.role.name}")
        return self.data[:, :, 0] > 0.5

    def with_data(self, data, valid=None) -> "MapField":
        return MapField(data, self.role, self.valid if valid is None else valid)


def mask_field(mask: np.ndarray) -> MapField:
    """Wrap a boolean (H, W) array as a MASK field."""
    return MapField(np.asarray(mask, dtype=np.float64), Role.MASK)


def pixel_centers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (x, y) coordinates of every pixel center, each shaped (H, W)."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    return x + 0.5, y + 0.5


def normalize_signed(img: ImageGrid) -> ImageGrid:
    if img.range_tag is not RangeTag.UNIT:
        raise ContractError(f"normalize_signed expects a UNIT image, got {img.range_tag.value}")
    return ImageGrid(2.0 * img.data - 1.0, RangeTag.SIGNED_UNIT)


def denormalize(img: ImageGrid) -> ImageGrid:
    if img.range_tag is not RangeTag.SIGNED_UNIT:
        raise ContractError(f"denormalize expects a SIGNED_UNIT image, got {img.range_tag.value}")
    return ImageGrid((img.data + 1.0) / 2.0, RangeTag.UNIT)


def _resize_axis(arr: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = arr.shape[axis]
    if n_in == n_out:
        return arr
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    shape = [1] * arr.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return np.take(arr, lo, axis=axis) * (1 - frac) + np.take(arr, hi, axis=axis) * frac


def resize_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resampling of an (H, W[, C]) array."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be at least 1x1, got {out_h}x{out_w}")
    out = _resize_axis(np.asarray(arr, dtype=np.float64), out_h, 0)
    return _resize_axis(out, out_w, 1)


def resize_bilinear(img: ImageGrid, out_h: int, out_w: int) -> ImageGrid:
    return ImageGrid(resize_array(img.data, out_h, out_w), img.range_tag)


def threshold_mask(field: MapField, thresh: float) -> MapField:
    if field.channels != 1:
        raise ContractError(f"threshold_mask needs a single-channel field, got {field.channels}")
    return mask_field(field.data[:, :, 0] >= thresh)


def sample_bilinear(arr: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup of an (H, W, C) array at continuous coordinates.

    Coordinates follow the pixel-centre convention; lookups beyond the
    outermost centres replicate the edge.
    """
    h, w = arr.shape[:2]
    fx = np.clip(np.asarray(x, dtype=np.float64) - 0.5, 0.0, w - 1)
    fy = np.clip(np.asarray(y, dtype=np.float64) - 0.5, 0.0, h - 1)
    x0 = np.floor(fx).astype(np.intp)
    y0 = np.floor(fy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (fx - x0)[..., None]
    ay = (fy - y0)[..., None]
    top = arr[y0, x0] * (1 - ax) + arr[y0, x1] * ax
    bot = arr[y1, x0] * (1 - ax) + arr[y1, x1] * ax
    return top * (1 - ay) + bot * ay
