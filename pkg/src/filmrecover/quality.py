"""Illumination removal and display-to-HU restoration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .imagecore import ContractError, ImageGrid, MapField, RangeTag, Role
from .synthgen.phantom import HU_MAX, HU_MIN

SHADING_FLOOR = 0.02
# Brightest-lit film is taken as unit irradiance; a high quantile is robust to specks.
SHADING_REFERENCE_QUANTILE = 0.99


@dataclass(frozen=True)
class WindowSpec:
    ww: float
    wl: float

    def __post_init__(self) -> None:
        if not self.ww > 0:
            raise ValueError(f"window width must be positive, got {self.ww}")

    @classmethod
    def from_meta(cls, meta: dict) -> "WindowSpec":
        win = meta.get("window") if isinstance(meta, dict) else None
        if not win or "ww" not in win or "wl" not in win:
            raise KeyError("metadata carries no window {ww, wl}")
        return cls(float(win["ww"]), float(win["wl"]))

    def to_dict(self) -> dict:
        return {"ww": self.ww, "wl": self.wl}


def _film(mask: MapField, shape) -> np.ndarray:
    film = mask.mask_array()
    if film.shape != tuple(shape[:2]):
        raise ContractError(f"mask {film.shape} does not match image {tuple(shape[:2])}")
    return film


def de_illuminate_oracle(warped: ImageGrid, albedo: MapField, mask: MapField) -> ImageGrid:
    """Ideal de-illumination: ground-truth albedo on the film, photo elsewhere."""
    if albedo.role is not Role.ALBEDO:
        raise ContractError(f"expected an ALBEDO map, got {albedo.role.name}")
    if (albedo.height, albedo.width) != (warped.height, warped.width):
        raise ContractError("albedo and photo sizes differ")
    film = _film(mask, warped.shape)
    alb = albedo.data
    if alb.shape[2] != warped.channels:
        alb = np.repeat(alb.mean(axis=2, keepdims=True), warped.channels, axis=2)
    return ImageGrid(np.where(film[..., None], alb, warped.data))


def estimate_flatfield(warped: ImageGrid, mask: MapField, sigma: float | None = None):
    """Divide out a heavily low-passed luminance estimate of the shading.

    Returns ``(shading, image)``. The blur is normalized by the blurred mask so
    background does not leak into the film; off-film pixels are left untouched.
    """
    if sigma is None:
        sigma = max(warped.height, warped.width) / 8
    if sigma < 4:
        raise ValueError(f"flat-field sigma must be >= 4 px, got {sigma}")
    film = _film(mask, warped.shape)
    if not film.any():
        raise ValueError("flat-field estimation over an empty film mask")
    lum = warped.gray()
    weight = film.astype(np.float64)
    num = ndimage.gaussian_filter(lum * weight, sigma, mode="constant")
    den = ndimage.gaussian_filter(weight, sigma, mode="constant")
    shading = np.where(film, num / np.maximum(den, 1e-12), 1.0)
    ref = float(np.quantile(shading[film], SHADING_REFERENCE_QUANTILE))
    gain = ref / np.maximum(shading, SHADING_FLOOR)
    out = np.where(film[..., None], np.clip(warped.data * gain[..., None], 0.0, 1.0), warped.data)
    return shading, ImageGrid(out)


def ct_restore(display: ImageGrid, win: WindowSpec) -> np.ndarray:
    """Invert the display window: gray in [0, 1] -> int16 HU."""
    if display.range_tag is not RangeTag.UNIT:
        raise ContractError("ct_restore expects a UNIT image")
    gray = display.gray()
    hu = np.round(gray * win.ww + win.wl - win.ww / 2.0)
    return np.clip(hu, HU_MIN, HU_MAX).astype(np.int16)


class Restorer(Protocol):
    """A cascade restorer: returns one output per stage."""

    n_stages: int

    def __call__(self, image: ImageGrid) -> list[ImageGrid]: ...


@dataclass(frozen=True)
class IdentityRestorer:
    n_stages: int = 3

    def __post_init__(self) -> None:
        if self.n_stages < 1:
            raise ValueError("a restorer needs at least one stage")

    def __call__(self, image: ImageGrid) -> list[ImageGrid]:
        return [image] * self.n_stages


def apply_restorer(restorer: Restorer, image: ImageGrid) -> list[ImageGrid]:
    stages = list(restorer(image))
    if len(stages) != restorer.n_stages:
        raise ContractError(f"restorer declared {restorer.n_stages} stages but produced {len(stages)}")
    return stages
