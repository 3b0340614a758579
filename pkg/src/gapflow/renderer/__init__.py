"""Mesh depth renderer, procedural gap scenes, and collision queries."""

from .camera import (BODY_TO_CAMERA, DEFAULT_FOV_H_DEG, DEFAULT_FOV_V_DEG,
                     DEFAULT_HEIGHT, DEFAULT_WIDTH, CameraModel,
                     camera_for_pose, intrinsics_from_fov)
from .core import (DEFAULT_D_MAX, NEAR_CLIP, DepthImage, DepthNoise,
                   active_backend, available_backends, check_collision,
                   get_kernels, inverse_depth_pooled, min_distance,
                   preprocess, render_depth, set_backend)
from .io import load_pgm, load_scene_text, save_pgm, save_scene_text
from .scene import GapConfig, GapScene, TriMesh, generate_gap, merge_scenes

__all__ = [
    "BODY_TO_CAMERA", "DEFAULT_D_MAX", "DEFAULT_FOV_H_DEG", "DEFAULT_FOV_V_DEG",
    "DEFAULT_HEIGHT", "DEFAULT_WIDTH", "NEAR_CLIP", "CameraModel", "DepthImage",
    "DepthNoise", "GapConfig", "GapScene", "TriMesh", "active_backend",
    "available_backends", "camera_for_pose", "check_collision", "generate_gap",
    "get_kernels", "intrinsics_from_fov", "inverse_depth_pooled", "load_pgm",
    "load_scene_text", "merge_scenes", "min_distance", "preprocess",
    "render_depth", "save_pgm", "save_scene_text", "set_backend",
]
