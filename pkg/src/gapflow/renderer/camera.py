"""Pinhole camera model; mounted at the body origin looking along body +x."""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import RenderError

# Camera axes expressed in the body frame (x fwd, y left, z up):
# image-right = -y_body, image-down = -z_body, optical axis = +x_body.
BODY_TO_CAMERA = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])

DEFAULT_WIDTH = 32
DEFAULT_HEIGHT = 24
DEFAULT_FOV_H_DEG = 87.0
DEFAULT_FOV_V_DEG = 58.0


def intrinsics_from_fov(width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT,
                        fov_h_deg=DEFAULT_FOV_H_DEG, fov_v_deg=DEFAULT_FOV_V_DEG):
    fx = (width / 2.0) / math.tan(math.radians(fov_h_deg) / 2.0)
    fy = (height / 2.0) / math.tan(math.radians(fov_v_deg) / 2.0)
    return fx, fy, width / 2.0, height / 2.0


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pos: np.ndarray  # (3,) world
    rot: np.ndarray  # (3, 3) world <- camera

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise RenderError("focal lengths must be positive")
        if not (0.0 <= self.cx <= self.width and 0.0 <= self.cy <= self.height):
            raise RenderError("principal point must lie inside the image")
        self.pos = np.ascontiguousarray(self.pos, dtype=np.float64)
        self.rot = np.ascontiguousarray(self.rot, dtype=np.float64)


def camera_for_pose(p, rot_world_body, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT,
                    fov_h_deg=DEFAULT_FOV_H_DEG, fov_v_deg=DEFAULT_FOV_V_DEG):
    """Camera rigidly attached to a body pose (position + rotation matrix)."""
    fx, fy, cx, cy = intrinsics_from_fov(width, height, fov_h_deg, fov_v_deg)
    return CameraModel(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
                       pos=np.asarray(p, dtype=np.float64),
                       rot=np.asarray(rot_world_body, dtype=np.float64) @ BODY_TO_CAMERA)
