"""Deterministic random scenes and camera rigs for tests and benchmarks."""

from __future__ import annotations

import math

import numpy as np

from gsrast.core import Camera, Gaussian, look_at, rgb_to_sh_dc
from gsrast.io import CameraEntry, CameraSet


def random_gaussians(rng: np.random.Generator, n: int, extent: float = 0.5,
                     scale_range=(1e-3, 0.3), opacity_range=(0.2, 0.95)) -> list[Gaussian]:
    """Gaussians in the box ``[-extent, extent]^3`` with log-uniform scales and uniform rotations."""
    means = rng.uniform(-extent, extent, size=(n, 3))
    log_lo, log_hi = math.log(scale_range[0]), math.log(scale_range[1])
    scales = np.exp(rng.uniform(log_lo, log_hi, size=(n, 3)))
    # normalized 4D normal samples are uniform on SO(3)
    quats = rng.normal(size=(n, 4))
    opacities = rng.uniform(*opacity_range, size=n)
    colors = rng.uniform(0.0, 1.0, size=(n, 3))
    return [
        Gaussian(means[i], scales[i], quats[i], opacities[i], rgb_to_sh_dc(colors[i]).reshape(1, 3))
        for i in range(n)
    ]


def ring_cameras(n: int, resolution: int = 64, radius: float = 3.0, height: float = 0.5,
                 fov_degrees: float = 60.0, role: str = "test") -> CameraSet:
    """``n`` cameras on a horizontal circle around the origin, all looking at it."""
    focal = 0.5 * resolution / math.tan(math.radians(fov_degrees) / 2.0)
    entries = []
    for i in range(n):
        angle = 2.0 * math.pi * i / max(n, 1)
        eye = [radius * math.sin(angle), height, -radius * math.cos(angle)]
        w2v = look_at(eye, [0.0, 0.0, 0.0], up=(0.0, 1.0, 0.0))
        cam = Camera(resolution, resolution, focal, focal, resolution / 2.0, resolution / 2.0, w2v)
        entries.append(CameraEntry(cam, f"cam{i:03d}", f"cam{i:03d}", role))
    return CameraSet(entries)


def synth_scene(seed: int, n: int, n_cameras: int = 3, resolution: int = 64):
    rng = np.random.default_rng(seed)
    return random_gaussians(rng, n), ring_cameras(n_cameras, resolution)
