"""Depth rendering, preprocessing, and collision queries with backend dispatch.

The compiled Cython kernels are used when the extension imported; the pure
numpy twins are the fallback (and the brute-force oracle the compiled path is
tested against). Both produce bit-identical images. Select explicitly with
GAPFLOW_RENDER_BACKEND=cython|numpy or set_backend().
"""

import os
from dataclasses import dataclass, field

import numpy as np

from ..diffcore import Tensor
from ..errors import RenderError
from . import kernels_np

try:
    from . import _kernels_cy
except ImportError:  # extension not built; numpy fallback still works
    _kernels_cy = None

DEFAULT_D_MAX = 20.0
NEAR_CLIP = 1e-6

_BACKENDS = {"numpy": kernels_np}
if _kernels_cy is not None:
    _BACKENDS["cython"] = _kernels_cy

_env_choice = os.environ.get("GAPFLOW_RENDER_BACKEND", "").strip().lower()
if _env_choice and _env_choice not in _BACKENDS:
    raise RenderError(f"GAPFLOW_RENDER_BACKEND={_env_choice!r} not available "
                      f"(have {sorted(_BACKENDS)})")
_active = _env_choice or ("cython" if "cython" in _BACKENDS else "numpy")


def available_backends():
    return sorted(_BACKENDS)


def active_backend():
    return _active


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise RenderError(f"unknown render backend {name!r} (have {sorted(_BACKENDS)})")
    _active = name


def get_kernels(backend=None):
    return _BACKENDS[backend or _active]


@dataclass
class DepthImage:
    values: np.ndarray  # (height, width), meters, in (0, d_max]
    d_max: float = DEFAULT_D_MAX

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise RenderError(f"depth image must be 2-D, got {self.values.shape}")
        if np.any(self.values <= 0.0) or np.any(self.values > self.d_max):
            raise RenderError("depth values must lie in (0, d_max]")

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]


@dataclass
class DepthNoise:
    """Parametric depth-noise injector (stand-in for stereo-matching artifacts).

    Multiplicative per-pixel Gaussian noise plus rectangular dropout patches
    forced to d_max. Disabled by default.
    """

    sigma: float = 0.0
    dropout_patches: int = 0
    patch_size: int = 4

    @property
    def enabled(self):
        return self.sigma > 0.0 or self.dropout_patches > 0


def render_depth(scene, camera, d_max=DEFAULT_D_MAX, noise=None, rng=None, backend=None):
    """Cast one ray per pixel center against the scene mesh; z-depth image."""
    mesh = scene.mesh if hasattr(scene, "mesh") else scene
    kern = get_kernels(backend)
    values = kern.render_depth_kernel(
        mesh.vertices, mesh.triangles, camera.pos, camera.rot,
        camera.fx, camera.fy, camera.cx, camera.cy,
        camera.width, camera.height, d_max, NEAR_CLIP)
    if noise is not None and noise.enabled:
        if rng is None:
            raise RenderError("depth noise requires an rng")
        if noise.sigma > 0.0:
            values = values * (1.0 + noise.sigma * rng.standard_normal(values.shape))
            values = np.clip(values, NEAR_CLIP, d_max)
        for _ in range(noise.dropout_patches):
            i = rng.integers(0, max(1, values.shape[0] - noise.patch_size))
            j = rng.integers(0, max(1, values.shape[1] - noise.patch_size))
            values[i:i + noise.patch_size, j:j + noise.patch_size] = d_max
    return DepthImage(values=values, d_max=d_max)


def inverse_depth_pooled(values):
    """Per-pixel inverse depth, then 2x2 max-pool (stride 2)."""
    if np.any(values <= 0.0):
        raise RenderError("depth values must be positive")
    h, w = values.shape
    if h % 2 or w % 2:
        raise RenderError(f"depth image dims must be even for 2x2 pooling, got {values.shape}")
    inv = 1.0 / values
    return inv.reshape(h // 2, 2, w // 2, 2).max(axis=(1, 3))


def preprocess(depth):
    """DepthImage -> constant tensor (1, height/2, width/2) of pooled inverse depth."""
    pooled = inverse_depth_pooled(depth.values)
    return Tensor.constant(pooled[None, :, :])


def min_distance(point, scene, backend=None):
    """Minimum distance from a world point to the scene mesh."""
    mesh = scene.mesh if hasattr(scene, "mesh") else scene
    kern = get_kernels(backend)
    return float(kern.min_point_triangle_distance(
        mesh.vertices, mesh.triangles, np.ascontiguousarray(point, dtype=np.float64)))


def check_collision(point, scene, radius=0.1, backend=None):
    """(collided, min_distance) for a sphere of the given radius at `point`."""
    if radius <= 0.0:
        raise RenderError(f"radius must be positive, got {radius}")
    d = min_distance(point, scene, backend=backend)
    return d < radius, d
