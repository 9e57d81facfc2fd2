"""Seeded generation of annotated warped-film samples and their on-disk layout."""

from __future__ import annotations

import copy
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import ndimage

from .. import fileio
from ..imagecore import ImageGrid
from .phantom import FilmLayout, compose_film_texture, head_phantom, make_phantom_slice, window_map
from .render import SampleBundle, render_bundle
from .warp import Camera, Light, SineTerm, WarpParams, build_surface, set_param


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "out_h": 256,
    "out_w": 256,
    "grid_n": 65,
    "layout": {"rows": 2, "cols": 2, "cell": 80, "margin": 6, "background_level": 0.0},
    "window": {"ww": 80, "wl": 40},
    "phantom": {"canvas": 256, "noise_hu": 10},
    # Gaussian prefilter (in film-texture pixels) applied before slices are shrunk into cells.
    "texture_blur": 0.8,
    "warp": {
        "n_sine": [0, 3],
        "amplitude": [0.0, 0.08],
        "freq": [0.5, 1.5],
        "slope_budget": 0.9,
        "curl": [-1.5, 1.5],
        "rotation_deg": [-25.0, 25.0],
        "translation": [-0.03, 0.03],
    },
    "camera": {"footprint_px": [165.0, 185.0], "distance": [2.0, 3.0], "principal_jitter": 4.0},
    "light": {"ambient": [0.35, 0.6], "diffuse": [0.3, 0.6], "tilt_deg": [0.0, 45.0]},
    "background": [0.05, 0.95],
}

FILE_KINDS = ("warped", "texture", "albedo", "uv", "deform", "coord3d", "normal", "depth", "mask", "hu", "meta")
_EXT = {"warped": "png", "texture": "png", "hu": "raw", "meta": "json"}


def resolve_config(user: dict | None = None, _base=None, _path="") -> dict:
    """Overlay ``user`` on the defaults; unknown keys raise ConfigError."""
    base = copy.deepcopy(DEFAULT_CONFIG if _base is None else _base)
    for key, val in (user or {}).items():
        where = f"{_path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            base[key] = resolve_config(val, base[key], where + ".")
        else:
            base[key] = val
    return base


def sample_filename(index: int, kind: str) -> str:
    return f"{index:04d}_{kind}.{_EXT.get(kind, 'fmap')}"


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def draw_warp_params(cfg: dict, rng: np.random.Generator, sheet=(1.0, 1.0)) -> WarpParams:
    w = cfg["warp"]
    lo, hi = w["n_sine"]
    terms = []
    for _ in range(int(rng.integers(lo, hi + 1))):
        ang = rng.uniform(0, 2 * math.pi)
        terms.append(SineTerm(rng.uniform(*w["amplitude"]) * rng.choice([-1.0, 1.0]), rng.uniform(*w["freq"]),
                              rng.uniform(0, 2 * math.pi), (math.cos(ang), math.sin(ang))))
    slope = sum(2 * math.pi * abs(t.amplitude) * t.freq for t in terms) / min(sheet)
    if slope > w["slope_budget"]:
        k = w["slope_budget"] / slope
        terms = [SineTerm(t.amplitude * k, t.freq, t.phase, t.direction) for t in terms]
    rot = tuple(math.radians(rng.uniform(*w["rotation_deg"])) for _ in range(3))
    trans = (rng.uniform(*w["translation"]), rng.uniform(*w["translation"]), 0.0)

    c = cfg["camera"]
    dist = rng.uniform(*c["distance"])
    focal = rng.uniform(*c["footprint_px"]) * dist / max(sheet)
    jit = c["principal_jitter"]
    cam = Camera(focal, cfg["out_w"] / 2 + rng.uniform(-jit, jit), cfg["out_h"] / 2 + rng.uniform(-jit, jit), dist)

    li = cfg["light"]
    tilt, azim = math.radians(rng.uniform(*li["tilt_deg"])), rng.uniform(0, 2 * math.pi)
    light = Light((math.sin(tilt) * math.cos(azim), math.sin(tilt) * math.sin(azim), -math.cos(tilt)),
                  rng.uniform(*li["ambient"]), rng.uniform(*li["diffuse"]))
    bg = tuple(float(v) for v in rng.uniform(*cfg["background"], size=3))
    return WarpParams(cam, tuple(terms), rng.uniform(*w["curl"]), rot, trans, light, bg, tuple(sheet))


def build_texture(cfg: dict, rng: np.random.Generator) -> tuple[ImageGrid, list[np.ndarray]]:
    layout = FilmLayout(**cfg["layout"])
    ph = cfg["phantom"]
    win = cfg["window"]
    slices, shown = [], []
    sigma = cfg["texture_blur"] * ph["canvas"] / layout.cell
    for _ in range(layout.rows * layout.cols):
        spec = head_phantom(rng, ph["canvas"], ph["noise_hu"])
        hu = make_phantom_slice(spec, int(rng.integers(2**31)))
        slices.append(hu)
        disp = window_map(hu, win["ww"], win["wl"]).data[..., 0]
        if sigma > 0:
            disp = ndimage.gaussian_filter(disp, sigma, mode="nearest")
        shown.append(ImageGrid(disp))
    return compose_film_texture(shown, layout), slices


def make_sample(cfg: dict, seed: int, index: int = 0, overrides: dict | None = None) -> SampleBundle:
    """Build one bundle from its own seed; identical inputs give identical bundles.

    ``overrides`` pins named warp parameters (see ``warp.set_param``) after drawing.
    """
    rng = np.random.default_rng(seed)
    texture, hu = build_texture(cfg, rng)
    th, tw = texture.height, texture.width
    sheet = (1.0, th / tw) if tw >= th else (tw / th, 1.0)
    params = draw_warp_params(cfg, rng, sheet)
    for name, val in (overrides or {}).items():
        params = set_param(params, name, val)
    mesh = build_surface(params, cfg["grid_n"])
    meta = {"seed": seed, "index": index, "window": dict(cfg["window"]), "texture_shape": [th, tw]}
    return render_bundle(mesh, texture, params, cfg["out_h"], cfg["out_w"], meta=meta, hu_slices=hu)


def save_sample(out_dir: str | os.PathLike, index: int, bundle: SampleBundle) -> dict:
    out_dir = Path(out_dir)
    files = {kind: sample_filename(index, kind) for kind in FILE_KINDS}
    fileio.write_png(out_dir / files["warped"], bundle.warped)
    fileio.write_png(out_dir / files["texture"], bundle.texture)
    for kind, fld in (("albedo", bundle.albedo), ("uv", bundle.uv), ("deform", bundle.deform),
                      ("coord3d", bundle.coord3d), ("normal", bundle.normal), ("depth", bundle.depth),
                      ("mask", bundle.bgmask)):
        fileio.write_fmap(out_dir / files[kind], fld)
    fileio.write_hu_raw(out_dir / files["hu"], bundle.hu_slices, {"window": bundle.meta.get("window")})
    fileio.write_json(out_dir / files["meta"], bundle.meta)
    return files


def load_sample(sample_dir: str | os.PathLike, index: int) -> SampleBundle:
    d = Path(sample_dir)
    path = {kind: d / sample_filename(index, kind) for kind in FILE_KINDS}
    missing = [str(p) for p in path.values() if not p.exists()]
    if missing:
        raise FileNotFoundError(f"missing sample files: {', '.join(missing)}")
    _, hu = fileio.read_hu_raw(path["hu"])
    return SampleBundle(
        warped=fileio.read_png(path["warped"]),
        texture=fileio.read_png(path["texture"]),
        albedo=fileio.read_fmap(path["albedo"]),
        uv=fileio.read_fmap(path["uv"]),
        deform=fileio.read_fmap(path["deform"]),
        coord3d=fileio.read_fmap(path["coord3d"]),
        normal=fileio.read_fmap(path["normal"]),
        depth=fileio.read_fmap(path["depth"]),
        bgmask=fileio.read_fmap(path["mask"]),
        hu_slices=hu,
        meta=fileio.read_json(path["meta"]),
    )


def _generate_one(args) -> dict:
    cfg, seed, index, out_dir = args
    s = sample_seed(seed, index)
    bundle = make_sample(cfg, s, index)
    files = save_sample(out_dir, index, bundle)
    return {"index": index, "seed": s, "files": files, "params": bundle.meta["params"]}


def generate_dataset(config: dict | None, seed: int, n: int, out_dir: str | os.PathLike, jobs: int = 1) -> dict:
    """Write ``n`` samples plus ``manifest.json`` into ``out_dir``."""
    cfg = resolve_config(config)
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out_dir}")
    tasks = [(cfg, seed, i, str(out_dir)) for i in range(n)]
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            samples = list(pool.map(_generate_one, tasks))
    else:
        samples = [_generate_one(t) for t in tasks]
    manifest = {"count": n, "seed": seed, "config": cfg, "samples": samples}
    fileio.write_json(out_dir / "manifest.json", manifest)
    return manifest
