"""Finite-difference gradient descent of warp parameters against ground-truth maps."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .imagecore import MapField, Role, mask_field, pixel_centers
from .losses import finite_diff_grad, signed_view, trans_loss
from .synthgen.render import RenderError, SampleBundle, rasterize, uv_and_deform
from .synthgen.warp import WarpError, WarpParams, build_surface, get_param, set_param

logger = logging.getLogger(__name__)

MAX_FREE = 12
STEP_FLOOR = 1e-8
GRAD_TOL = 1e-6

# Typical magnitude per parameter kind; the search runs in units of these.
DEFAULT_SCALES = {
    "curl": 1.0,
    "rotation": 0.3,
    "translation": 0.05,
    "amplitude": 0.05,
    "freq": 0.5,
    "phase": 1.0,
    "focal": 50.0,
    "distance": 0.5,
    "cx": 10.0,
    "cy": 10.0,
}


def param_scale(name: str, overrides: dict | None = None) -> float:
    if overrides and name in overrides:
        return float(overrides[name])
    head, _, tail = name.partition(".")
    for key in (name, tail, head):
        if key in DEFAULT_SCALES:
            return DEFAULT_SCALES[key]
    return 1.0


@dataclass
class FitConfig:
    free: list
    max_iters: int = 60
    eps: float = 1e-3
    step0: float = 0.5
    fit_size: int = 128
    uv_mode: str = "split"
    scales: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FitResult:
    names: list
    values: list
    params: dict
    loss_trace: list
    converged: bool
    evaluations: int
    stop_reason: str

    def to_dict(self) -> dict:
        return asdict(self)


def _block_mean(arr: np.ndarray, k: int) -> np.ndarray:
    h, w = arr.shape[0] // k, arr.shape[1] // k
    a = arr[:h * k, :w * k]
    return a.reshape(h, k, w, k, *a.shape[2:]).mean(axis=(1, 3))


def downsample_gt(bundle: SampleBundle, fit_size: int) -> tuple[MapField, MapField, MapField]:
    """GT uv/deform/mask at ``fit_size`` by block-averaging UV over fully-covered blocks."""
    h, w = bundle.height, bundle.width
    k = h // fit_size
    if k < 1 or h % fit_size or w % fit_size or w // fit_size != k:
        return bundle.uv, bundle.deform, bundle.bgmask
    film = bundle.film & bundle.uv.valid
    full = _block_mean(film.astype(float), k) == 1.0
    uv = _block_mean(np.where(film[..., None], bundle.uv.data, 0.0), k)
    lh, lw = full.shape
    px, py = pixel_centers(lh, lw)
    deform = np.stack([uv[..., 0] * lw - px, uv[..., 1] * lh - py], axis=-1)
    return MapField(uv, Role.UV, full), MapField(deform, Role.DEFORM, full), mask_field(full)


def scaled_params(params: WarpParams, factor: float) -> WarpParams:
    """Same scene seen by a camera whose image is ``factor`` times larger."""
    c = params.camera
    return replace(params, camera=replace(c, focal=c.focal * factor, cx=c.cx * factor, cy=c.cy * factor))


def render_maps(params: WarpParams, out_h: int, out_w: int, grid_n: int = 65):
    mesh = build_surface(params, grid_n)
    return uv_and_deform(rasterize(mesh, params, out_h, out_w), mesh)


def make_objective(bundle: SampleBundle, names, cfg: FitConfig):
    """ltrans between maps rendered from candidate values and the bundle's GT maps."""
    base = bundle.params
    gt_uv, gt_df, gt_mask = downsample_gt(bundle, cfg.fit_size)
    fh, fw = gt_uv.height, gt_uv.width
    factor = fw / bundle.width
    gt_uv_s, gt_df_s = signed_view(gt_uv), signed_view(gt_df)
    counter = {"n": 0}

    def params_at(x) -> WarpParams:
        p = base
        for name, val in zip(names, x):
            p = set_param(p, name, val)
        return p

    def objective(x) -> float:
        counter["n"] += 1
        try:
            p = scaled_params(params_at(x), factor)
            uv, df, mask = render_maps(p, fh, fw)
        except (RenderError, WarpError):
            return float("inf")
        both = mask_field(mask.mask_array() & gt_mask.mask_array())
        if not both.mask_array().any():
            return float("inf")
        return trans_loss(signed_view(uv), signed_view(df), gt_uv_s, gt_df_s, both, cfg.uv_mode)

    return objective, params_at, counter


def fit_warp_params(bundle: SampleBundle, cfg: FitConfig, init) -> FitResult:
    """Gradient descent with halving backtracking on the free warp parameters."""
    names = list(cfg.free)
    if not 1 <= len(names) <= MAX_FREE:
        raise ValueError(f"between 1 and {MAX_FREE} free parameters allowed, got {len(names)}")
    objective, params_at, counter = make_objective(bundle, names, cfg)
    scale = np.array([param_scale(n, cfg.scales) for n in names])

    def scaled(z):
        return objective(z * scale)

    z = np.asarray(init, float) / scale
    f = scaled(z)
    if not np.isfinite(f):
        raise FloatingPointError("fit objective is not finite at the initial parameters")
    trace = [(0, f)]
    step = cfg.step0
    reason = "max_iters"
    for it in range(1, cfg.max_iters + 1):
        g = finite_diff_grad(scaled, z, cfg.eps)
        if np.max(np.abs(g)) < GRAD_TOL:
            reason = "gradient"
            break
        step = min(2.0 * step, cfg.step0 * 8)
        while step >= STEP_FLOOR:
            z_new = z - step * g
            f_new = scaled(z_new)
            if f_new < f:
                break
            step *= 0.5
        else:
            reason = "step_floor"
            break
        z, f = z_new, f_new
        trace.append((it, f))
        logger.debug("fit iter %d: ltrans=%.6g step=%.3g", it, f, step)
    values = (z * scale).tolist()
    return FitResult(
        names=names,
        values=values,
        params=params_at(values).to_dict(),
        loss_trace=[[i, float(v)] for i, v in trace],
        converged=reason != "max_iters",
        evaluations=counter["n"],
        stop_reason=reason,
    )


def initial_values(bundle: SampleBundle, names) -> list:
    return [get_param(bundle.params, n) for n in names]
