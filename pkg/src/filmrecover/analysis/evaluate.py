"""Dewarp-and-compare evaluation of predicted UV / deformation maps."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .. import mapops
from ..imagecore import ImageGrid, MapField, Role
from ..synthgen.render import SampleBundle
from .metrics import ms_ssim, psnr, ssim


class Mode(enum.Enum):
    PLAIN = "PLAIN"
    MAP_DESHIFT = "MAP_DESHIFT"
    IMAGE_DESHIFT = "IMAGE_DESHIFT"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        aliases = {"none": cls.PLAIN, "plain": cls.PLAIN, "map": cls.MAP_DESHIFT, "image": cls.IMAGE_DESHIFT}
        key = str(value).lower()
        return aliases[key] if key in aliases else cls(str(value).upper())


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    ms_ssim: float
    mode: Mode = Mode.PLAIN
    deshifted: "MetricReport | None" = None
    filled_fraction: float = 0.0
    offset: tuple | None = None

    def to_dict(self) -> dict:
        d = {"mode": self.mode.value, "psnr": self.psnr, "ssim": self.ssim, "ms_ssim": self.ms_ssim,
             "filled_fraction": self.filled_fraction}
        if self.offset is not None:
            d["offset"] = list(self.offset)
        d["deshifted"] = self.deshifted.to_dict() if self.deshifted else None
        return d


def dewarp(bundle: SampleBundle, uv: MapField, source: str = "albedo") -> tuple[np.ndarray, mapops.BackwardMap]:
    """Invert ``uv`` and resample the bundle photo (or its albedo) into the texture frame."""
    th, tw = bundle.texture.height, bundle.texture.width
    bmap = mapops.uv_to_backward(uv, bundle.bgmask, th, tw)
    img = ImageGrid(bundle.albedo.data) if source == "albedo" else bundle.warped
    return mapops.backward_sample(img, bmap).gray(), bmap


def compare_on_support(rec: np.ndarray, ref: np.ndarray, support: np.ndarray) -> tuple[float, float, float]:
    """PSNR over ``support``; SSIM/MS-SSIM with off-support pixels copied from ``ref``."""
    comp = np.where(support, rec, ref)
    return psnr(rec, ref, mask=support), ssim(comp, ref), ms_ssim(comp, ref)


def _shift(arr: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    out = np.full_like(arr, fill)
    h, w = arr.shape[:2]
    out[max(0, dy):min(h, h + dy), max(0, dx):min(w, w + dx)] = \
        arr[max(0, -dy):min(h, h - dy), max(0, -dx):min(w, w - dx)]
    return out


def evaluate_recovery(bundle: SampleBundle, pred_uv: MapField, pred_df: MapField | None = None,
                      mode="PLAIN", source: str = "albedo", radius: int = 4) -> MetricReport:
    """Merge -> invert -> dewarp -> compare with the flat texture in the requested mode."""
    mode = Mode.parse(mode)
    mask = bundle.bgmask
    if pred_df is not None:
        aux = mapops.deformation_to_uv(pred_df, mask, bundle.width, bundle.height)
    else:
        aux = MapField(np.zeros(pred_uv.shape), Role.UV, np.zeros(pred_uv.shape[:2], bool))
    merged = mapops.merge_uv(pred_uv, aux, mask)
    if mode is Mode.MAP_DESHIFT:
        merged = mapops.deshift_map(merged, bundle.uv, mask)
    rec, bmap = dewarp(bundle, merged, source)
    ref = bundle.texture.gray()
    support = bmap.coverage != mapops.Coverage.EMPTY
    offset = None
    if mode is Mode.IMAGE_DESHIFT:
        dy, dx, _ = mapops.best_translation(ImageGrid(np.where(support, ref, 0.0)),
                                            ImageGrid(np.where(support, rec, 0.0)), radius)
        rec = _shift(rec, -dy, -dx, 0.0)
        support = _shift(support, -dy, -dx, False)
        offset = (dy, dx)
    p, s, m = compare_on_support(rec, ref, support)
    return MetricReport(p, s, m, mode, None, float(np.mean(bmap.coverage == mapops.Coverage.FILLED)), offset)


def evaluate_with_deshift(bundle, pred_uv, pred_df=None, deshift="map", **kw) -> MetricReport:
    """PLAIN report carrying the de-shifted variant (if any) as ``deshifted``."""
    plain = evaluate_recovery(bundle, pred_uv, pred_df, Mode.PLAIN, **kw)
    mode = Mode.parse(deshift)
    if mode is not Mode.PLAIN:
        plain.deshifted = evaluate_recovery(bundle, pred_uv, pred_df, mode, **kw)
    return plain
