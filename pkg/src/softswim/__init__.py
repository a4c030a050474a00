"""Differentiable 2D soft-body swimmer simulation and actuation fitting."""

__version__ = "0.1.0"

from .geometry import (
    ProfileParams,
    Region,
    SwimmerMesh,
    generate_mesh,
    profile_halfwidth,
    spine_labeling_error,
)

__all__ = [
    "ProfileParams",
    "Region",
    "SwimmerMesh",
    "generate_mesh",
    "profile_halfwidth",
    "spine_labeling_error",
    "__version__",
]
