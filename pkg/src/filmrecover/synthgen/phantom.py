"""Phantom CT slices, display windowing and film texture layout."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..imagecore import ImageGrid, resize_bilinear

HU_MIN = -1024
HU_MAX = 3071
AIR_HU = -1024


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    axes: tuple[float, float]
    angle: float
    hu: int

    def __post_init__(self) -> None:
        if not HU_MIN <= self.hu <= HU_MAX:
            raise ValueError(f"hu {self.hu} outside [{HU_MIN}, {HU_MAX}]")
        if min(self.axes) <= 0:
            raise ValueError(f"ellipse axes must be positive, got {self.axes}")


@dataclass(frozen=True)
class PhantomSpec:
    """Square canvas with ellipses painted in order; fractions of the canvas side."""

    canvas: int
    bodies: tuple[Ellipse, ...] = ()
    noise_hu: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        bodies = tuple(
            Ellipse(tuple(b["center"]), tuple(b["axes"]), float(b["angle"]), int(b["hu"]))
            for b in d.get("bodies", ())
        )
        return cls(int(d["canvas"]), bodies, int(d.get("noise_hu", 0)))


def ellipse_mask(canvas: int, body: Ellipse) -> np.ndarray:
    c = (np.arange(canvas) + 0.5) / canvas
    x, y = np.meshgrid(c, c)
    dx, dy = x - body.center[0], y - body.center[1]
    ca, sa = math.cos(body.angle), math.sin(body.angle)
    xr = ca * dx + sa * dy
    yr = -sa * dx + ca * dy
    return (xr / body.axes[0]) ** 2 + (yr / body.axes[1]) ** 2 <= 1.0


def make_phantom_slice(spec: PhantomSpec, seed: int) -> np.ndarray:
    """Paint ``spec`` onto an air canvas; returns an int16 HU grid."""
    hu = np.full((spec.canvas, spec.canvas), float(AIR_HU))
    inside = np.zeros(hu.shape, bool)
    for body in spec.bodies:
        m = ellipse_mask(spec.canvas, body)
        hu[m] = body.hu
        inside |= m
    if spec.noise_hu > 0 and inside.any():
        rng = np.random.default_rng(seed)
        noise = rng.integers(-spec.noise_hu, spec.noise_hu + 1, size=hu.shape)
        hu[inside] += noise[inside]
    return np.clip(hu, HU_MIN, HU_MAX).astype(np.int16)


def head_phantom(rng: np.random.Generator, canvas: int = 256, noise_hu: int = 10) -> PhantomSpec:
    """Axial head slice: skull, brain, white matter, ventricles and an optional lesion."""
    s = rng.uniform(0.8, 1.0)
    cx, cy = 0.5 + rng.uniform(-0.02, 0.02), 0.5 + rng.uniform(-0.02, 0.02)
    tilt = rng.uniform(-0.15, 0.15)
    ax, ay = 0.38 * s, 0.46 * s
    bodies = [
        Ellipse((cx, cy), (ax, ay), tilt, int(rng.integers(900, 1300))),
        Ellipse((cx, cy), (ax - 0.03, ay - 0.03), tilt, int(rng.integers(36, 44))),
        Ellipse((cx - 0.09 * s, cy), (0.09 * s, 0.22 * s), tilt + 0.1, int(rng.integers(24, 30))),
        Ellipse((cx + 0.09 * s, cy), (0.09 * s, 0.22 * s), tilt - 0.1, int(rng.integers(24, 30))),
    ]
    vent = rng.uniform(0.5, 1.2)
    for side in (-1, 1):
        bodies.append(Ellipse((cx + side * 0.04 * s, cy - 0.02), (0.025 * s * vent, 0.09 * s * vent),
                              tilt + side * 0.25, int(rng.integers(2, 10))))
    if rng.random() < 0.6:
        r = rng.uniform(0.03, 0.07) * s
        lx, ly = cx + rng.uniform(-0.15, 0.15) * s, cy + rng.uniform(-0.25, 0.25) * s
        bodies.append(Ellipse((lx, ly), (r, r * rng.uniform(0.7, 1.0)), rng.uniform(0, math.pi),
                              int(rng.integers(55, 75))))
    return PhantomSpec(canvas, tuple(bodies), noise_hu)


def window_map(hu, ww: float, wl: float) -> ImageGrid:
    """Display transform of an HU grid through window width ``ww`` and level ``wl``."""
    if ww <= 0:
        raise ValueError(f"window width must be positive, got {ww}")
    lo = wl - ww / 2.0
    return ImageGrid(np.clip((np.asarray(hu, dtype=np.float64) - lo) / ww, 0.0, 1.0))


@dataclass(frozen=True)
class FilmLayout:
    rows: int
    cols: int
    cell: int
    margin: int
    background_level: float = 0.0

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("layout needs at least one row and one column")
        if self.cell < 16:
            raise ValueError(f"cell size must be >= 16 px, got {self.cell}")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if not 0.0 <= self.background_level <= 1.0:
            raise ValueError("background_level must lie in [0, 1]")

    @property
    def size(self) -> tuple[int, int]:
        """Texture (height, width)."""
        return (self.rows * self.cell + (self.rows + 1) * self.margin,
                self.cols * self.cell + (self.cols + 1) * self.margin)

    def cell_origin(self, r: int, c: int) -> tuple[int, int]:
        """(x, y) of the top-left pixel of cell (r, c)."""
        step = self.cell + self.margin
        return self.margin + c * step, self.margin + r * step


def compose_film_texture(slices, layout: FilmLayout) -> ImageGrid:
    """Tile grayscale slices row-major into a film sheet."""
    slices = list(slices)
    if len(slices) > layout.rows * layout.cols:
        raise ValueError(f"{len(slices)} slices do not fit a {layout.rows}x{layout.cols} layout")
    h, w = layout.size
    sheet = np.full((h, w), float(layout.background_level))
    for k, img in enumerate(slices):
        r, c = divmod(k, layout.cols)
        x0, y0 = layout.cell_origin(r, c)
        cell = resize_bilinear(img, layout.cell, layout.cell).gray()
        sheet[y0:y0 + layout.cell, x0:x0 + layout.cell] = cell
    return ImageGrid(sheet)
