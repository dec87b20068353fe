"""Stereo disparity simulation and absolute-distance regression."""

from ._core import (
    Error,
    Model,
    Scene,
    ViewingGeometry,
    closed_form_scale,
    default_config,
    disparity_from_depth,
    generate_scene,
    make_sample,
    pixel_ray,
    r_squared,
    rearranged_scene,
    render_depth,
    rmse,
    run_pipeline,
    sample_distances,
    small_angle_disparity,
    vergence_angle,
)

__all__ = [
    "Error",
    "Model",
    "Scene",
    "ViewingGeometry",
    "closed_form_scale",
    "default_config",
    "disparity_from_depth",
    "generate_scene",
    "make_sample",
    "pixel_ray",
    "r_squared",
    "rearranged_scene",
    "render_depth",
    "rmse",
    "run_pipeline",
    "sample_distances",
    "small_angle_disparity",
    "vergence_angle",
]
