"""Uncalibrated photometric stereo under general second-order harmonic lighting.

Recovers a perspective depth map, per-channel albedo and per-image harmonic
lighting vectors from images taken under a fixed viewpoint and unknown,
varying illumination.  Also ships a synthetic renderer for ground-truth data
and a balloon-style depth initializer with an interactive tuning service.
"""

from upstereo.scene import (
    AlbedoMaps,
    CameraIntrinsics,
    DepthMap,
    EnvironmentMap,
    ImageStack,
    LightingSet,
    PixelDomain,
    load_scene,
    save_outputs,
)
from upstereo.geometry import (
    GradientOperator,
    NormalField,
    build_gradient_operator,
    harmonic_images,
    normalize_field,
    residual_jacobian_z,
    shading,
    unnormalized_normal,
)
from upstereo.balloon import (
    balloon,
    init_depth_balloon,
    init_depth_hemisphere,
    integrate_gradient,
    log_perspective_gradient,
    orthographic_normals,
    spectral_norm_gradient,
)
from upstereo.solver import SolverConfig, SolverState, solve
from upstereo.evaluation import mean_angular_error, report

__all__ = [
    "AlbedoMaps",
    "CameraIntrinsics",
    "DepthMap",
    "EnvironmentMap",
    "GradientOperator",
    "ImageStack",
    "LightingSet",
    "NormalField",
    "PixelDomain",
    "SolverConfig",
    "SolverState",
    "balloon",
    "build_gradient_operator",
    "harmonic_images",
    "init_depth_balloon",
    "init_depth_hemisphere",
    "integrate_gradient",
    "load_scene",
    "log_perspective_gradient",
    "mean_angular_error",
    "normalize_field",
    "orthographic_normals",
    "report",
    "residual_jacobian_z",
    "save_outputs",
    "shading",
    "solve",
    "spectral_norm_gradient",
    "unnormalized_normal",
]
