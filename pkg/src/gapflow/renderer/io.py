"""Debug dumps: 16-bit PGM depth images and plain-text scene listings."""

import numpy as np

from ..errors import RenderError
from .core import DepthImage
from .scene import GapScene, TriMesh

SCENE_HEADER = "# gapflow scene v1"


def save_pgm(depth, path):
    """16-bit binary PGM (P5, maxval 65535), depth in millimeters, big-endian."""
    mm = np.clip(np.rint(depth.values * 1000.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii"))
        fh.write(mm.tobytes())


def load_pgm(path):
    """Inverse of save_pgm; returns depth in meters (quantized to mm)."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise RenderError(f"not a binary PGM: magic {magic!r}")
        dims = fh.readline().split()
        maxval = int(fh.readline())
        if maxval != 65535:
            raise RenderError(f"expected 16-bit PGM, got maxval {maxval}")
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(fh.read(w * h * 2), dtype=">u2").reshape(h, w)
    return data.astype(np.float64) / 1000.0


def save_scene_text(scene, path):
    """Plain-text mesh listing: `v x y z` vertex lines, `t i j k` 0-based
    triangle lines, gap metadata in comment lines."""
    lines = [SCENE_HEADER]
    lines.append("# gap_pos " + " ".join(repr(float(x)) for x in scene.gap_pos))
    lines.append("# gap_rot " + " ".join(repr(float(x)) for x in scene.gap_rot.reshape(-1)))
    lines.append(f"# aperture {float(scene.aperture[0])!r} {float(scene.aperture[1])!r}")
    lines.append(f"# tilt {float(scene.tilt)!r}")
    for v in scene.mesh.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for t in scene.mesh.triangles:
        lines.append(f"t {t[0]} {t[1]} {t[2]}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scene_text(path):
    verts, tris, meta = [], [], {}
    with open(path, encoding="ascii") as fh:
        first = fh.readline().rstrip("\n")
        if first != SCENE_HEADER:
            raise RenderError(f"unrecognized scene header: {first!r}")
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#":
                if len(parts) > 2:
                    meta[parts[1]] = [float(x) for x in parts[2:]]
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "t":
                tris.append([int(x) for x in parts[1:4]])
            else:
                raise RenderError(f"unrecognized scene line: {line!r}")
    mesh = TriMesh(np.asarray(verts), np.asarray(tris, dtype=np.int32))
    if {"gap_pos", "gap_rot", "aperture", "tilt"} <= meta.keys():
        return GapScene(mesh=mesh, gap_pos=np.asarray(meta["gap_pos"]),
                        gap_rot=np.asarray(meta["gap_rot"]).reshape(3, 3),
                        aperture=tuple(meta["aperture"]), tilt=meta["tilt"][0])
    return GapScene(mesh=mesh, gap_pos=np.zeros(3), gap_rot=np.eye(3),
                    aperture=(0.0, 0.0), tilt=0.0)
