"""Dewarping and restoration objectives.

All map losses reduce with a mean over valid film pixels (and channels), so
their magnitudes do not depend on resolution. They operate on the data as
given; use :func:`signed_view` / :func:`signed_pair` first to put maps into
the [-1, 1] training scale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .imagecore import ContractError, ImageGrid, MapField, Role, mask_field


class EmptyMaskError(ValueError):
    pass


@dataclass
class LossReport:
    l3d: float = 0.0
    lnor: float = 0.0
    ldp: float = 0.0
    lbg: float = 0.0
    lshape: float = 0.0
    lshift: float = 0.0
    ldisturb: float = 0.0
    ldiff: float = 0.0
    ldf: float = 0.0
    luv: float = 0.0
    ltrans: float = 0.0
    ldewarp: float = 0.0
    valid_pixel_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _selection(pred: MapField, gt: MapField, mask: MapField) -> np.ndarray:
    if pred.shape != gt.shape:
        raise ContractError(f"pred {pred.shape} and gt {gt.shape} differ")
    sel = pred.valid & gt.valid & mask.mask_array()
    if not sel.any():
        raise EmptyMaskError("loss over an empty film mask")
    return sel


def l1_map_loss(pred: MapField, gt: MapField, mask: MapField) -> float:
    sel = _selection(pred, gt, mask)
    return float(np.abs(pred.data[sel] - gt.data[sel]).mean())


_SHAPE_ROLES = (("l3d", Role.COORD3D), ("lnor", Role.NORMAL), ("ldp", Role.DEPTH), ("lbg", Role.MASK))


def shape_loss(preds, gts, mask: MapField) -> LossReport:
    """Multi-map L1 terms in the order (coord3d, normal, depth, background)."""
    preds, gts = list(preds), list(gts)
    if len(preds) != 4 or len(gts) != 4:
        raise ContractError("shape_loss needs four predicted and four ground-truth maps")
    rep = LossReport()
    full = mask_field(np.ones((mask.height, mask.width), bool))
    for (name, role), p, g in zip(_SHAPE_ROLES, preds, gts):
        if p.role is not role or g.role is not role:
            raise ContractError(f"{name} expects role {role.name}, got {p.role.name}/{g.role.name}")
        # The background map is supervised on the whole frame, not on the film it predicts.
        setattr(rep, name, l1_map_loss(p, g, full if role is Role.MASK else mask))
    rep.lshape = rep.l3d + rep.lnor + rep.ldp + rep.lbg
    rep.valid_pixel_count = int(np.count_nonzero(mask.mask_array()))
    return rep


def shift_disturb_diff(pred: MapField, gt: MapField, mask: MapField) -> tuple[float, float, float]:
    """Shift, disturbance and gated de-shifted difference terms of a 2-channel map error.

    With ``delta = pred - gt`` on valid film pixels and per-channel mean ``mu``
    and population std ``sigma``: shift = sum |mu|, disturbance = sum |sigma|,
    and each element contributes ``min(|delta|, |delta - mu|)`` when
    ``delta * (delta - mu) > 0``, else zero; the contributions are averaged.
    """
    if pred.channels != 2:
        raise ContractError(f"expected a 2-channel map, got {pred.channels}")
    sel = _selection(pred, gt, mask)
    d = pred.data[sel] - gt.data[sel]  # (N, 2)
    mu = d.mean(axis=0)
    sigma = d.std(axis=0)
    e = d - mu
    contrib = np.where(d * e > 0, np.minimum(np.abs(d), np.abs(e)), 0.0)
    return float(np.abs(mu).sum()), float(np.abs(sigma).sum()), float(contrib.mean())


def df_loss(pred: MapField, gt: MapField, mask: MapField) -> float:
    if pred.role is not Role.DEFORM:
        raise ContractError(f"df_loss expects DEFORM maps, got {pred.role.name}")
    return sum(shift_disturb_diff(pred, gt, mask))


def uv_loss(pred: MapField, gt: MapField, mask: MapField, mode: str = "split") -> float:
    """UV-map loss: the shift/disturb/diff structure by default, ``mode="l1"`` for plain L1."""
    if pred.role is not Role.UV:
        raise ContractError(f"uv_loss expects UV maps, got {pred.role.name}")
    if mode == "l1":
        return l1_map_loss(pred, gt, mask)
    if mode != "split":
        raise ValueError(f"unknown uv loss mode {mode!r}")
    return sum(shift_disturb_diff(pred, gt, mask))


def trans_loss(pred_uv, pred_df, gt_uv, gt_df, mask, uv_mode: str = "split") -> float:
    return df_loss(pred_df, gt_df, mask) + uv_loss(pred_uv, gt_uv, mask, uv_mode)


def dewarp_loss(preds: dict, gts: dict, mask: MapField, uv_mode: str = "split") -> LossReport:
    """Full report; ``preds``/``gts`` map names coord3d, normal, depth, bgmask, uv, deform to fields."""
    order = ("coord3d", "normal", "depth", "bgmask")
    rep = shape_loss([preds[k] for k in order], [gts[k] for k in order], mask)
    rep.lshift, rep.ldisturb, rep.ldiff = shift_disturb_diff(preds["deform"], gts["deform"], mask)
    rep.ldf = rep.lshift + rep.ldisturb + rep.ldiff
    rep.luv = uv_loss(preds["uv"], gts["uv"], mask, uv_mode)
    rep.ltrans = rep.ldf + rep.luv
    rep.ldewarp = rep.lshape + rep.ltrans
    return rep


def recover_loss(stage_outputs, gt: ImageGrid) -> float:
    """Half the sum over cascade stages of each stage's pixel-mean squared error."""
    stages = list(stage_outputs)
    if not stages:
        raise ValueError("recover_loss needs at least one stage output")
    total = 0.0
    for k, s in enumerate(stages):
        if s.shape != gt.shape:
            raise ContractError(f"stage {k} shape {s.shape} != gt {gt.shape}")
        total += float(np.mean((s.data - gt.data) ** 2))
    return 0.5 * total


def signed_view(field: MapField, lo=None, hi=None) -> MapField:
    """Linear rescale of a map into the [-1, 1] training range.

    UV and MASK use their unit range; DEFORM is expressed in the same scale
    as UV (pixel offset over half the frame size); NORMAL passes through.
    COORD3D and DEPTH need explicit per-channel ``lo``/``hi`` bounds.
    """
    d = field.data
    if field.role in (Role.UV, Role.MASK, Role.ALBEDO):
        out = 2.0 * d - 1.0
    elif field.role is Role.DEFORM:
        out = 2.0 * d / np.array([field.width, field.height], float)
    elif field.role is Role.NORMAL:
        return field
    else:
        if lo is None or hi is None:
            raise ContractError(f"signed_view of {field.role.name} needs lo/hi bounds")
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        out = 2.0 * (d - lo) / np.where(hi > lo, hi - lo, 1.0) - 1.0
    return _RawField(out, field.role, field.valid)


def signed_pair(pred: MapField, gt: MapField) -> tuple[MapField, MapField]:
    """Signed views of a prediction and its target, bounded by the target's valid range."""
    lo = hi = None
    if pred.role in (Role.COORD3D, Role.DEPTH):
        vals = gt.data[gt.valid]
        lo, hi = vals.min(axis=0), vals.max(axis=0)
    return signed_view(pred, lo, hi), signed_view(gt, lo, hi)


class _RawField(MapField):
    """MapField whose samples are a rescaled view; role range checks are skipped."""

    def __init__(self, data, role, valid):
        arr = np.asarray(data, np.float64)
        arr = arr[:, :, None] if arr.ndim == 2 else arr
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "role", Role(role))
        object.__setattr__(self, "valid", np.asarray(valid, bool))


def finite_diff_grad(objective, params, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar objective."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.asarray(params, np.float64)
    g = np.zeros_like(p)
    for k in range(p.size):
        step = np.zeros_like(p)
        step[k] = eps
        fp, fm = objective(p + step), objective(p - step)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"objective is not finite around coordinate {k}")
        g[k] = (fp - fm) / (2 * eps)
    return g
