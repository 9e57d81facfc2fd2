"""Z-buffered triangle rasterization of the film sheet into annotation maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from ..imagecore import ImageGrid, MapField, Role, mask_field, pixel_centers, sample_bilinear
from .warp import Mesh, WarpParams

RASTER_TOL = 0.75  # px, rasterized vs analytic quantities


class RenderError(RuntimeError):
    pass


@numba.njit(cache=True)
def _raster(sx, sy, iz, tris, height, width, zbuf, tri_id, bary):
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0, x1, y1, x2, y2 = sx[i0], sy[i0], sx[i1], sy[i1], sx[i2], sy[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        cmin = max(0, int(np.ceil(min(x0, x1, x2) - 0.5)))
        cmax = min(width - 1, int(np.floor(max(x0, x1, x2) - 0.5)))
        rmin = max(0, int(np.ceil(min(y0, y1, y2) - 0.5)))
        rmax = min(height - 1, int(np.floor(max(y0, y1, y2) - 0.5)))
        for r in range(rmin, rmax + 1):
            py = r + 0.5
            for c in range(cmin, cmax + 1):
                px = c + 0.5
                w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
                w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
                w2 = 1.0 - w0 - w1
                if w0 < -1e-9 or w1 < -1e-9 or w2 < -1e-9:
                    continue
                z = w0 * iz[i0] + w1 * iz[i1] + w2 * iz[i2]
                if z > zbuf[r, c]:
                    zbuf[r, c] = z
                    tri_id[r, c] = t
                    bary[r, c, 0] = w0 * iz[i0] / z
                    bary[r, c, 1] = w1 * iz[i1] / z
                    bary[r, c, 2] = w2 * iz[i2] / z


def project(vertices: np.ndarray, params: WarpParams) -> tuple[np.ndarray, np.ndarray]:
    cam = params.camera
    z = vertices[:, 2]
    return cam.focal * vertices[:, 0] / z + cam.cx, cam.focal * vertices[:, 1] / z + cam.cy


@dataclass(frozen=True, eq=False)
class Raster:
    """Per-pixel hits: triangle index (-1 = background) and perspective-correct barycentrics."""

    tri_id: np.ndarray
    bary: np.ndarray
    inv_depth: np.ndarray

    @property
    def film(self) -> np.ndarray:
        return self.tri_id >= 0

    def interpolate(self, mesh: Mesh, attr: np.ndarray) -> np.ndarray:
        """Barycentric blend of a per-vertex attribute; zeros off the film."""
        tri = np.where(self.film, self.tri_id, 0)
        corners = mesh.triangles[tri]  # (H, W, 3)
        out = np.einsum("hwk,hwkc->hwc", self.bary, attr[corners])
        out[~self.film] = 0.0
        return out


def rasterize(mesh: Mesh, params: WarpParams, out_h: int, out_w: int) -> Raster:
    verts = mesh.vertices
    if np.any(verts[:, 2] <= 1e-6):
        raise RenderError("sheet crosses the camera plane")
    sx, sy = project(verts, params)
    zbuf = np.zeros((out_h, out_w))
    tri_id = np.full((out_h, out_w), -1, np.int64)
    bary = np.zeros((out_h, out_w, 3))
    _raster(sx, sy, 1.0 / verts[:, 2], mesh.triangles, out_h, out_w, zbuf, tri_id, bary)
    if not (tri_id >= 0).any():
        raise RenderError(f"sheet is off-screen (coverage fraction 0.0 of {out_h}x{out_w})")
    return Raster(tri_id, bary, zbuf)


def face_normals(mesh: Mesh) -> np.ndarray:
    """Unit face normals oriented toward the camera at the origin."""
    a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    centroid = (a + b + c) / 3.0
    flip = np.einsum("ij,ij->i", n, centroid) > 0
    n[flip] *= -1
    return n


def uv_and_deform(raster: Raster, mesh: Mesh) -> tuple[MapField, MapField, MapField]:
    """UV, deformation (output-pixel units) and film-mask fields of a raster."""
    h, w = raster.tri_id.shape
    film = raster.film
    uv = raster.interpolate(mesh, mesh.texcoords)
    px, py = pixel_centers(h, w)
    deform = np.stack([uv[..., 0] * w - px, uv[..., 1] * h - py], axis=-1)
    deform[~film] = 0.0
    return MapField(uv, Role.UV, film), MapField(deform, Role.DEFORM, film), mask_field(film)


@dataclass(frozen=True, eq=False)
class SampleBundle:
    warped: ImageGrid
    coord3d: MapField
    normal: MapField
    depth: MapField
    uv: MapField
    deform: MapField
    bgmask: MapField
    albedo: MapField
    texture: ImageGrid
    hu_slices: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.warped.height

    @property
    def width(self) -> int:
        return self.warped.width

    @property
    def film(self) -> np.ndarray:
        return self.bgmask.mask_array()

    @property
    def params(self) -> WarpParams:
        return WarpParams.from_dict(self.meta["params"])


ALBEDO_BACKGROUND = 0.5


def render_bundle(mesh: Mesh, texture: ImageGrid, params: WarpParams, out_h: int, out_w: int,
                  meta: dict | None = None, hu_slices=None) -> SampleBundle:
    raster = rasterize(mesh, params, out_h, out_w)
    film = raster.film
    uv, deform, bgmask = uv_and_deform(raster, mesh)

    coord = raster.interpolate(mesh, mesh.vertices)
    depth = np.where(film, 1.0 / np.where(film, raster.inv_depth, 1.0), 0.0)[..., None]
    normals = face_normals(mesh)[np.where(film, raster.tri_id, 0)]
    normals[~film] = 0.0

    tex = texture.gray()[..., None]
    gray = sample_bilinear(tex, uv.data[..., 0] * texture.width, uv.data[..., 1] * texture.height)[..., 0]
    albedo = np.where(film, gray, ALBEDO_BACKGROUND)
    albedo_rgb = np.repeat(albedo[..., None], 3, axis=2)

    light = params.light
    shade = light.ambient + light.diffuse * np.maximum(0.0, normals @ np.asarray(light.direction))
    warped = np.where(film[..., None], albedo_rgb * shade[..., None], np.asarray(params.background))

    full_meta = {"params": params.to_dict()}
    full_meta.update(meta or {})
    return SampleBundle(
        warped=ImageGrid(np.clip(warped, 0.0, 1.0)),
        coord3d=MapField(coord, Role.COORD3D, film),
        normal=MapField(normals, Role.NORMAL, film),
        depth=MapField(depth, Role.DEPTH, film),
        uv=uv,
        deform=deform,
        bgmask=bgmask,
        albedo=MapField(albedo_rgb, Role.ALBEDO),
        texture=texture,
        hu_slices=list(hu_slices or []),
        meta=full_meta,
    )


def validate_bundle(bundle: SampleBundle) -> list[str]:
    """Check the cross-member bundle invariants; returns a list of violations."""
    problems = []
    h, w = bundle.height, bundle.width
    for name in ("coord3d", "normal", "depth", "uv", "deform", "bgmask", "albedo"):
        f = getattr(bundle, name)
        if (f.height, f.width) != (h, w):
            problems.append(f"{name} is {f.height}x{f.width}, expected {h}x{w}")
    if problems:
        return problems
    film = bundle.film
    if not film.any():
        problems.append("bundle has no film pixels")
        return problems
    if not bundle.uv.valid[film].all():
        problems.append("uv invalid on film pixels")
    uv = bundle.uv.data[film]
    if uv.min() < 0 or uv.max() > 1:
        problems.append("uv outside [0,1] on film")
    n = np.linalg.norm(bundle.normal.data[film], axis=1)
    if np.abs(n - 1).max() > 1e-4:
        problems.append("normals not unit length")
    if bundle.depth.data[film, 0].min() <= 0:
        problems.append("non-positive depth on film")
    px, py = pixel_centers(h, w)
    d = bundle.deform.data
    gap = np.hypot(bundle.uv.data[..., 0] * w - (px + d[..., 0]), bundle.uv.data[..., 1] * h - (py + d[..., 1]))
    if gap[film].max() > RASTER_TOL:
        problems.append(f"uv/deform inconsistency {gap[film].max():.3f} px")
    return problems
