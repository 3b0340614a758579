"""Procedural gap scenes: a 12-vertex frame mesh around a rectangular aperture.

Template layout (gap-frame in-plane coordinates, plane at x=0):

* 4 inner vertices bound the aperture rectangle (width x height).
* 8 outer vertices bound the frame silhouette: 4 corners plus 4 edge
  midpoints, `margin` beyond the aperture on each side.
* 12 triangles tile the ring between the two loops.

Randomization jitters the outer corner/midpoint vertices in-plane (and
optionally the inner corners), producing varied silhouettes while the
aperture stays rectangular by default. Gap pose is sampled as distance ahead,
lateral offset, height, and a tilt (roll about the gap normal).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import RenderError

# Triangulation of the ring between the inner quad (0..3) and outer octagon
# (4..11); see module docstring and docs in the repo README.
_RING_TRIANGLES = np.array([
    (4, 5, 0), (5, 1, 0), (5, 6, 1),
    (6, 7, 1), (7, 2, 1), (7, 8, 2),
    (8, 9, 2), (9, 3, 2), (9, 10, 3),
    (10, 11, 3), (11, 0, 3), (11, 4, 0),
], dtype=np.int32)

_MIN_TRIANGLE_AREA = 1e-10


@dataclass
class TriMesh:
    vertices: np.ndarray  # (n, 3) float64, world frame, meters
    triangles: np.ndarray  # (m, 3) int32

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise RenderError(f"vertices must be (n, 3), got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise RenderError(f"triangles must be (m, 3), got {self.triangles.shape}")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise RenderError("triangle indices out of range")
        if np.any(self.areas() <= _MIN_TRIANGLE_AREA):
            raise RenderError("mesh contains degenerate triangles")

    def areas(self):
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)


@dataclass
class GapConfig:
    """Geometry and placement ranges for procedural gap generation."""

    aperture_w: float = 0.8
    aperture_h: float = 0.4
    margin: float = 0.75
    distance: tuple = (3.0, 5.0)
    lateral: tuple = (-1.0, 1.0)
    height: tuple = (1.0, 2.0)
    tilt_deg: tuple = (-80.0, 80.0)
    jitter_outer: float = 0.1
    jitter_inner: float = 0.0
    scale: tuple = (1.0, 1.0)  # aperture scale range (aux training shrinks gaps)
    max_retries: int = 20

    def __post_init__(self):
        if self.aperture_w <= 0 or self.aperture_h <= 0 or self.margin <= 0:
            raise RenderError("aperture and margin must be positive")
        if not (-80.0 <= self.tilt_deg[0] <= self.tilt_deg[1] <= 80.0):
            raise RenderError("tilt range must lie within [-80, 80] degrees")


@dataclass
class GapScene:
    mesh: TriMesh
    gap_pos: np.ndarray  # (3,) aperture center, world
    gap_rot: np.ndarray  # (3, 3) world <- gap frame; column 0 is the normal
    aperture: tuple  # inner (width, height) after scaling, meters
    tilt: float  # rad
    vertex_jitter: np.ndarray = field(default=None)  # (12, 2) in-plane offsets

    def __post_init__(self):
        self.gap_pos = np.asarray(self.gap_pos, dtype=np.float64)
        self.gap_rot = np.asarray(self.gap_rot, dtype=np.float64)


def _rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _segments_intersect(p1, p2, p3, p4):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    return (orient(p1, p2, p3) * orient(p1, p2, p4) < 0
            and orient(p3, p4, p1) * orient(p3, p4, p2) < 0)


def _aperture_is_simple(inner):
    # The two non-adjacent edge pairs of the quad must not cross.
    if _segments_intersect(inner[0], inner[1], inner[2], inner[3]):
        return False
    if _segments_intersect(inner[1], inner[2], inner[3], inner[0]):
        return False
    area = 0.0
    for i in range(4):
        j = (i + 1) % 4
        area += inner[i][0] * inner[j][1] - inner[j][0] * inner[i][1]
    return abs(area) > 1e-6


def _template_vertices(w2, h2, margin):
    big_w, big_h = w2 + margin, h2 + margin
    inner = [(-w2, -h2), (w2, -h2), (w2, h2), (-w2, h2)]
    outer = [(-big_w, -big_h), (0.0, -big_h), (big_w, -big_h), (big_w, 0.0),
             (big_w, big_h), (0.0, big_h), (-big_w, big_h), (-big_w, 0.0)]
    return np.array(inner + outer)


def generate_gap(seed, config=None):
    """Deterministic random gap scene from a seed.

    Draw order is part of the format contract (same seed, same scene):
    scale, distance, lateral, height, tilt, outer jitter (8x2), inner
    jitter (4x2). Jitter draws that would self-intersect the aperture are
    resampled up to config.max_retries times.
    """
    cfg = config or GapConfig()
    rng = np.random.default_rng(seed)
    scale = rng.uniform(cfg.scale[0], cfg.scale[1])
    distance = rng.uniform(cfg.distance[0], cfg.distance[1])
    lateral = rng.uniform(cfg.lateral[0], cfg.lateral[1])
    height = rng.uniform(cfg.height[0], cfg.height[1])
    tilt = math.radians(rng.uniform(cfg.tilt_deg[0], cfg.tilt_deg[1]))

    w2 = scale * cfg.aperture_w / 2.0
    h2 = scale * cfg.aperture_h / 2.0
    template = _template_vertices(w2, h2, cfg.margin)

    for attempt in range(cfg.max_retries):
        jitter = np.zeros((12, 2))
        jitter[4:] = rng.uniform(-cfg.jitter_outer, cfg.jitter_outer, (8, 2))
        jitter[:4] = rng.uniform(-cfg.jitter_inner, cfg.jitter_inner, (4, 2))
        plane = template + jitter
        if _aperture_is_simple(plane[:4]):
            break
    else:
        raise RenderError(f"aperture self-intersects after {cfg.max_retries} jitter draws")

    gap_pos = np.array([distance, lateral, height])
    gap_rot = _rot_x(tilt)
    local = np.column_stack([np.zeros(12), plane[:, 0], plane[:, 1]])
    vertices = gap_pos[None, :] + local @ gap_rot.T
    mesh = TriMesh(vertices, _RING_TRIANGLES.copy())
    return GapScene(mesh=mesh, gap_pos=gap_pos, gap_rot=gap_rot,
                    aperture=(2.0 * w2, 2.0 * h2), tilt=tilt, vertex_jitter=jitter)


def merge_scenes(scenes):
    """Single mesh covering several gap scenes (for multi-gap courses)."""
    verts, tris, offset = [], [], 0
    for s in scenes:
        verts.append(s.mesh.vertices)
        tris.append(s.mesh.triangles + offset)
        offset += len(s.mesh.vertices)
    return TriMesh(np.vstack(verts), np.vstack(tris))
