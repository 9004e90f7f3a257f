"""Differentiable Gaussian splatting with deferred mirror reflection.

CPU reference implementation: float64 numpy for per-Gaussian math, compiled
row-band kernels for per-pixel blending, hand-written analytic gradients
throughout. Renders are bitwise reproducible for any thread count.
"""

from .core import Camera, GaussianCloud
from .pipeline import ParamGrads, render, render_backward
from .shading import EnvironmentMap

__all__ = [
    "Camera",
    "EnvironmentMap",
    "GaussianCloud",
    "ParamGrads",
    "render",
    "render_backward",
]

__version__ = "0.1.0"
