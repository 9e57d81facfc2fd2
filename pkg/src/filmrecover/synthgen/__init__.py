"""Procedural warped-film samples with full ground-truth annotation maps."""

from .dataset import (
    DEFAULT_CONFIG,
    ConfigError,
    generate_dataset,
    load_sample,
    make_sample,
    resolve_config,
    save_sample,
)
from .phantom import (
    Ellipse,
    FilmLayout,
    PhantomSpec,
    compose_film_texture,
    head_phantom,
    make_phantom_slice,
    window_map,
)
from .render import RenderError, SampleBundle, rasterize, render_bundle, uv_and_deform, validate_bundle
from .warp import Camera, Light, Mesh, SineTerm, WarpError, WarpParams, build_surface, get_param, set_param
