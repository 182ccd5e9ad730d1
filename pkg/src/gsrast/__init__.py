"""CPU tile-based rasterizer that evaluates 3D Gaussians exactly in 3D."""

from gsrast.core import Camera, Gaussian
from gsrast.raster import Framebuffer, RenderConfig, render
from gsrast.oracle import render_reference

__all__ = ["Camera", "Gaussian", "Framebuffer", "RenderConfig", "render", "render_reference"]
