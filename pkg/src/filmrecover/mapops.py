"""UV / deformation / backward map conversions and backward-map dewarping."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .imagecore import ContractError, ImageGrid, MapField, Role, pixel_centers, sample_bilinear

logger = logging.getLogger(__name__)

FILL_TOL = 0.01  # px, Jacobi stopping criterion
FILL_MAX_ITERS = 500


class Coverage(enum.IntEnum):
    EMPTY = 0
    OBSERVED = 1
    FILLED = 2


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BackwardMap:
    """Texture-frame map of source positions (continuous photo pixel coords)."""

    field: MapField
    coverage: np.ndarray

    @property
    def height(self) -> int:
        return self.field.height

    @property
    def width(self) -> int:
        return self.field.width

    def fractions(self) -> dict:
        n = self.coverage.size
        return {c.name.lower() + "_fraction": float(np.count_nonzero(self.coverage == c)) / n for c in Coverage}


def _film_pixels(field: MapField, mask: MapField) -> np.ndarray:
    if (field.height, field.width) != (mask.height, mask.width):
        raise ContractError("map and mask sizes differ")
    return field.valid & mask.mask_array()


def _hull_support(points: np.ndarray, h: int, w: int) -> np.ndarray:
    """Texture cells whose centres lie in the convex hull of ``points`` (index coords)."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    try:
        hull = ConvexHull(points)
    except (QhullError, ValueError):
        # Degenerate (collinear / too few) targets: no area to fill.
        return np.zeros((h, w), bool)
    eq = hull.equations
    inside = np.ones(h * w, bool)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    for a, b, c in eq:
        inside &= pts @ np.array([a, b]) + c <= 1e-9
    return inside.reshape(h, w)


def _jacobi_fill(values: np.ndarray, fixed: np.ndarray, holes: np.ndarray) -> tuple[np.ndarray, int]:
    """Diffuse ``values`` into ``holes`` with 4-neighbour averaging, ``fixed`` held constant."""
    region = fixed | holes
    out = values.copy()
    # Start holes from the nearest observed value; bounded by the boundary data from step 0.
    _, (iy, ix) = ndimage.distance_transform_edt(~fixed, return_indices=True)
    out[holes] = values[iy[holes], ix[holes]]
    nb = np.zeros(region.shape)
    pad_region = np.pad(region, 1)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb += pad_region[1 + dy:1 + dy + region.shape[0], 1 + dx:1 + dx + region.shape[1]]
    active = holes & (nb > 0)
    for it in range(1, FILL_MAX_ITERS + 1):
        pad = np.pad(out * region[..., None], ((1, 1), (1, 1), (0, 0)))
        acc = np.zeros_like(out)
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            acc += pad[1 + dy:1 + dy + region.shape[0], 1 + dx:1 + dx + region.shape[1]]
        new = out.copy()
        new[active] = acc[active] / nb[active, None]
        delta = np.abs(new - out).max() if active.any() else 0.0
        out = new
        if delta < FILL_TOL:
            return out, it
    return out, FILL_MAX_ITERS


def uv_to_backward(uv: MapField, mask: MapField, tex_h: int, tex_w: int) -> BackwardMap:
    """Invert an image-frame UV map into a texture-frame backward map.

    Each film pixel is splatted with bilinear weights into the four texture
    cells around its UV target; weighted means give OBSERVED cells. Holes
    inside the convex hull of the targets are diffused (FILLED); the rest
    is EMPTY.
    """
    if uv.role is not Role.UV:
        raise ContractError(f"uv_to_backward needs a UV field, got {uv.role.name}")
    film = _film_pixels(uv, mask)
    if not film.any():
        raise EmptyInputError("uv_to_backward: no valid film pixels")
    px, py = pixel_centers(uv.height, uv.width)
    src = np.stack([px[film], py[film]], axis=1)
    tx = uv.data[film, 0] * tex_w - 0.5
    ty = uv.data[film, 1] * tex_h - 0.5

    x0 = np.floor(tx).astype(np.intp)
    y0 = np.floor(ty).astype(np.intp)
    fx, fy = tx - x0, ty - y0
    n_cells = tex_h * tex_w
    wsum = np.zeros(n_cells)
    vsum = np.zeros((n_cells, 2))
    for dx, dy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)), (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        cx, cy = x0 + dx, y0 + dy
        ok = (cx >= 0) & (cx < tex_w) & (cy >= 0) & (cy < tex_h) & (wt > 0)
        idx = cy[ok] * tex_w + cx[ok]
        wsum += np.bincount(idx, wt[ok], n_cells)
        for k in range(2):
            vsum[:, k] += np.bincount(idx, wt[ok] * src[ok, k], n_cells)

    observed = (wsum > 0).reshape(tex_h, tex_w)
    values = np.zeros((n_cells, 2))
    hit = wsum > 0
    values[hit] = vsum[hit] / wsum[hit, None]
    values = values.reshape(tex_h, tex_w, 2)

    support = _hull_support(np.stack([tx, ty], axis=1), tex_h, tex_w) | observed
    holes = support & ~observed
    if holes.any():
        values, iters = _jacobi_fill(values, observed, holes)
        logger.debug("hole fill: %d cells, %d iterations", np.count_nonzero(holes), iters)
    coverage = np.full((tex_h, tex_w), Coverage.EMPTY, np.int8)
    coverage[observed] = Coverage.OBSERVED
    coverage[holes] = Coverage.FILLED
    values[~support] = 0.0
    return BackwardMap(MapField(values, Role.BACKWARD, support), coverage)


def backward_from_field(field: MapField) -> BackwardMap:
    """Rebuild a BackwardMap from a stored BACKWARD field (coverage collapses to OBSERVED/EMPTY)."""
    if field.role is not Role.BACKWARD:
        raise ContractError(f"expected a BACKWARD field, got {field.role.name}")
    cov = np.where(field.valid, Coverage.OBSERVED, Coverage.EMPTY).astype(np.int8)
    return BackwardMap(field, cov)


def deformation_to_uv(deform: MapField, mask: MapField, out_w: int, out_h: int) -> MapField:
    if deform.role is not Role.DEFORM:
        raise ContractError(f"deformation_to_uv needs a DEFORM field, got {deform.role.name}")
    film = _film_pixels(deform, mask)
    px, py = pixel_centers(deform.height, deform.width)
    uv = np.stack([(px + deform.data[..., 0]) / out_w, (py + deform.data[..., 1]) / out_h], axis=-1)
    uv[~film] = 0.0
    return MapField(uv, Role.UV, film)


def uv_usable(uv: MapField) -> np.ndarray:
    """Declared valid and both channels inside [0, 1]."""
    d = uv.data
    return uv.valid & np.all((d >= 0.0) & (d <= 1.0), axis=2)


def merge_uv(primary_uv: MapField, aux_uv: MapField, mask: MapField) -> MapField:
    """Keep usable primary pixels, fill the rest of the film from ``aux_uv``."""
    if primary_uv.shape != aux_uv.shape:
        raise ContractError("merge_uv: primary and aux shapes differ")
    film = mask.mask_array()
    keep = film & uv_usable(primary_uv)
    take = film & ~keep & uv_usable(aux_uv)
    data = np.zeros(primary_uv.shape)
    data[keep] = primary_uv.data[keep]
    data[take] = aux_uv.data[take]
    return MapField(data, Role.UV, keep | take)


def backward_sample(img: ImageGrid, bmap: BackwardMap, fill=0.0) -> ImageGrid:
    """Resample ``img`` into the texture frame; EMPTY cells get ``fill``."""
    f = bmap.field
    out = sample_bilinear(img.data, f.data[..., 0], f.data[..., 1])
    empty = bmap.coverage == Coverage.EMPTY
    out[empty] = np.broadcast_to(np.asarray(fill, float), (img.channels,))
    return ImageGrid(out, img.range_tag)


def deshift_map(pred: MapField, gt: MapField, mask: MapField) -> MapField:
    """Subtract the per-channel mean error against ``gt`` over valid film pixels."""
    if pred.shape != gt.shape or pred.role is not gt.role:
        raise ContractError("deshift_map: pred and gt must share shape and role")
    sel = pred.valid & gt.valid & mask.mask_array()
    if not sel.any():
        raise EmptyInputError("deshift_map: no valid film pixels")
    mu = (pred.data[sel] - gt.data[sel]).mean(axis=0)
    return MapField(pred.data - mu, pred.role, pred.valid)


def best_translation(a: ImageGrid, b: ImageGrid, radius: int, peak: float = 1.0) -> tuple[int, int, float]:
    """Integer offset (dy, dx) such that ``b[y, x] ~ a[y - dy, x - dx]``, with its PSNR.

    Exhaustive over [-radius, radius]^2 on the overlapping region; ties go to the
    smallest |dy| + |dx|, then lexicographic (dy, dx).
    """
    from .analysis.metrics import psnr_arrays

    if a.shape != b.shape:
        raise ContractError("best_translation: shape mismatch")
    if radius > 16:
        raise ValueError("radius must be <= 16")
    h, w = a.height, a.width
    best = None
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ya, yb = slice(max(0, -dy), min(h, h - dy)), slice(max(0, dy), min(h, h + dy))
            xa, xb = slice(max(0, -dx), min(w, w - dx)), slice(max(0, dx), min(w, w + dx))
            if ya.stop <= ya.start or xa.stop <= xa.start:
                continue
            score = psnr_arrays(a.data[ya, xa], b.data[yb, xb], peak)
            key = (-score, abs(dy) + abs(dx), dy, dx)
            if best is None or key < best[0]:
                best = (key, dy, dx, score)
    return best[1], best[2], best[3]
