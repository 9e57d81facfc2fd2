"""Parametric film deformation: height-field sines, cylindrical curl, rigid pose."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np


class WarpError(ValueError):
    """Warp parameters describe an invalid sheet."""


@dataclass(frozen=True)
class SineTerm:
    amplitude: float
    freq: float
    phase: float
    direction: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self) -> None:
        d = np.asarray(self.direction, float)
        n = float(np.hypot(*d))
        if n == 0:
            raise WarpError("sine direction must be nonzero")
        if abs(n - 1.0) > 1e-12:  # leave unit input untouched so dict round trips are exact
            d = d / n
        object.__setattr__(self, "direction", (float(d[0]), float(d[1])))


@dataclass(frozen=True)
class Camera:
    focal: float
    cx: float
    cy: float
    distance: float


@dataclass(frozen=True)
class Light:
    direction: tuple[float, float, float] = (0.0, 0.0, -1.0)
    ambient: float = 1.0
    diffuse: float = 0.0

    def __post_init__(self) -> None:
        d = np.asarray(self.direction, float)
        n = float(np.linalg.norm(d))
        if n == 0:
            raise WarpError("light direction must be nonzero")
        if abs(n - 1.0) > 1e-12:
            d = d / n
        object.__setattr__(self, "direction", tuple(float(v) for v in d))


@dataclass(frozen=True)
class WarpParams:
    """Full scene description for one rendered film photo.

    ``sheet`` is the physical (width, height) of the film; rotation angles
    are radians about the sheet centre (x, then y, then z); translation is
    added before the sheet is pushed ``camera.distance`` along the optical axis.
    """

    camera: Camera
    sine_terms: tuple[SineTerm, ...] = ()
    curl: float = 0.0
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    light: Light = field(default_factory=Light)
    background: tuple[float, float, float] = (0.5, 0.5, 0.5)
    sheet: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sine_terms", tuple(self.sine_terms))
        if max_slope(self) >= 1.0:
            raise WarpError(f"height-field slope bound {max_slope(self):.3f} >= 1 (sheet would fold)")
        if self.camera.distance <= 0 or self.camera.focal <= 0:
            raise WarpError("camera focal and distance must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WarpParams":
        return cls(
            camera=Camera(**d["camera"]),
            sine_terms=tuple(SineTerm(t["amplitude"], t["freq"], t["phase"], tuple(t["direction"]))
                             for t in d.get("sine_terms", ())),
            curl=float(d.get("curl", 0.0)),
            rotation=tuple(d.get("rotation", (0.0, 0.0, 0.0))),
            translation=tuple(d.get("translation", (0.0, 0.0, 0.0))),
            light=Light(tuple(d["light"]["direction"]), d["light"]["ambient"], d["light"]["diffuse"])
            if "light" in d else Light(),
            background=tuple(d.get("background", (0.5, 0.5, 0.5))),
            sheet=tuple(d.get("sheet", (1.0, 1.0))),
        )


def max_slope(params: WarpParams) -> float:
    """Upper bound on |dz/dx| of the height field over the sheet."""
    side = min(params.sheet)
    return sum(2 * math.pi * abs(t.amplitude) * t.freq for t in params.sine_terms) / side


# Flat names used by the fitter: "curl", "rotation.0", "sine0.amplitude", "camera.focal", ...
def get_param(params: WarpParams, name: str) -> float:
    head, _, tail = name.partition(".")
    if head == "curl":
        return params.curl
    if head in ("rotation", "translation"):
        return getattr(params, head)[int(tail)]
    if head.startswith("sine"):
        return getattr(params.sine_terms[int(head[4:])], tail)
    if head in ("camera", "light"):
        return getattr(getattr(params, head), tail)
    raise KeyError(f"unknown warp parameter {name!r}")


def set_param(params: WarpParams, name: str, value: float) -> WarpParams:
    head, _, tail = name.partition(".")
    value = float(value)
    if head == "curl":
        return replace(params, curl=value)
    if head in ("rotation", "translation"):
        vec = list(getattr(params, head))
        vec[int(tail)] = value
        return replace(params, **{head: tuple(vec)})
    if head.startswith("sine"):
        k = int(head[4:])
        terms = list(params.sine_terms)
        terms[k] = replace(terms[k], **{tail: value})
        return replace(params, sine_terms=tuple(terms))
    if head in ("camera", "light"):
        return replace(params, **{head: replace(getattr(params, head), **{tail: value})})
    raise KeyError(f"unknown warp parameter {name!r}")


def rotation_matrix(angles) -> np.ndarray:
    ax, ay, az = angles
    cx, sx, cy, sy, cz, sz = math.cos(ax), math.sin(ax), math.cos(ay), math.sin(ay), math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def height_field(params: WarpParams, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    z = np.zeros(np.broadcast(u, v).shape)
    for t in params.sine_terms:
        z += t.amplitude * np.sin(2 * math.pi * t.freq * (t.direction[0] * u + t.direction[1] * v) + t.phase)
    return z


def surface_points(params: WarpParams, u: np.ndarray, v: np.ndarray, *, posed: bool = True) -> np.ndarray:
    """Camera-frame 3D positions of texcoords (u, v); shape (..., 3).

    With ``posed=False`` the rigid transform and camera offset are skipped.
    """
    sw, sh = params.sheet
    x = (u - 0.5) * sw
    y = (v - 0.5) * sh
    z = height_field(params, u, v)
    k = params.curl
    if k != 0.0:
        r = 1.0 / k
        theta = x / r
        x, z = (r - z) * np.sin(theta), r - (r - z) * np.cos(theta)
    pts = np.stack([x, y, z], axis=-1)
    if not posed:
        return pts
    pts = pts @ rotation_matrix(params.rotation).T
    return pts + np.asarray(params.translation) + np.array([0.0, 0.0, params.camera.distance])


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray   # (V, 3) camera frame
    texcoords: np.ndarray  # (V, 2) (u, v)
    triangles: np.ndarray  # (T, 3) vertex indices

    def area(self) -> float:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return float(0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum())


def grid_triangles(n: int) -> np.ndarray:
    idx = np.arange(n * n).reshape(n, n)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    return np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)]).astype(np.int64)


def build_surface(params: WarpParams, grid_n: int = 65, *, posed: bool = True) -> Mesh:
    """Triangulate the deformed sheet on a ``grid_n`` x ``grid_n`` texcoord lattice."""
    if grid_n < 2:
        raise ValueError(f"grid_n must be >= 2, got {grid_n}")
    if max_slope(params) >= 1.0:
        raise WarpError("height-field slope bound violated")
    t = np.linspace(0.0, 1.0, grid_n)
    u, v = np.meshgrid(t, t)
    verts = surface_points(params, u, v, posed=posed).reshape(-1, 3)
    tex = np.stack([u.ravel(), v.ravel()], axis=1)
    return Mesh(verts, tex, grid_triangles(grid_n))
