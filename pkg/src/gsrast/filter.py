"""Adaptive 3D smoothing filter with view-perpendicular amplitude correction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gsrast.core import Camera, Gaussian, quat_to_rotation

DEFAULT_KERNEL = 0.3


class BehindCamera(ValueError):
    """The point has non-positive view depth, so ``f / d`` is undefined."""


@dataclass(frozen=True)
class FilterState:
    k: float
    v_hat: float
    v_eff: float
    s_hat: np.ndarray
    amplitude: float

    @property
    def filtered_std(self) -> np.ndarray:
        return np.sqrt(self.s_hat)


def sampling_frequency(camera: Camera, mean_view) -> float:
    """Pixels per world unit at the depth of ``mean_view``."""
    z = float(mean_view[2])
    if z <= 0.0:
        raise BehindCamera(f"view depth {z} is not positive")
    return camera.focal / z


def mean_in_frustum(camera: Camera, point_world) -> bool:
    """True when the point projects inside the image and lies beyond the near plane."""
    p = camera.world_to_view[:3, :3] @ np.asarray(point_world, dtype=np.float64)
    p = p + camera.world_to_view[:3, 3]
    if p[2] <= camera.near:
        return False
    x = camera.fx * p[0] / p[2] + camera.cx
    y = camera.fy * p[1] / p[2] + camera.cy
    return 0.0 <= x <= camera.width and 0.0 <= y <= camera.height


def max_training_frequency(g: Gaussian, training_cameras, require_visible: bool = True) -> float:
    """Largest ``f / d`` over the training cameras; ``inf`` when none applies."""
    best = -math.inf
    for camera in training_cameras:
        if require_visible and not mean_in_frustum(camera, g.mean):
            continue
        mean_view = camera.world_to_view[:3, :3] @ g.mean + camera.world_to_view[:3, 3]
        if mean_view[2] <= 0.0:
            continue
        best = max(best, sampling_frequency(camera, mean_view))
    return best if best > 0.0 else math.inf


def effective_frequency(v_train: float, v_hat: float | None) -> float:
    """``min(v_train, v_hat)``; a missing ``v_hat`` (mean behind camera) falls back to ``v_train``."""
    if v_hat is None:
        return v_train
    return min(v_train, v_hat)


def filtered_scales(scale, k: float, v_eff: float) -> tuple[np.ndarray, np.ndarray]:
    """Squared filtered scales ``s^2 + k / v^2`` and their square roots."""
    s2 = np.asarray(scale, dtype=np.float64) ** 2
    dilation = 0.0 if math.isinf(v_eff) else k / (v_eff * v_eff)
    s_hat = s2 + dilation
    return s_hat, np.sqrt(s_hat)


def amplitude_factor(scale, rotation, d, k: float, v_eff: float) -> float:
    """Ratio of perpendicular cross-section areas before and after dilation.

    Works in the Gaussian's local frame, so no matrix is inverted.
    """
    s2 = np.asarray(scale, dtype=np.float64) ** 2
    s_hat, _ = filtered_scales(scale, k, v_eff)
    dl = quat_to_rotation(np.asarray(rotation, dtype=np.float64)).T @ np.asarray(d, dtype=np.float64)
    d2 = dl * dl
    num = d2[0] * s2[1] * s2[2] + d2[1] * s2[0] * s2[2] + d2[2] * s2[0] * s2[1]
    den = d2[0] * s_hat[1] * s_hat[2] + d2[1] * s_hat[0] * s_hat[2] + d2[2] * s_hat[0] * s_hat[1]
    return min(1.0, math.sqrt(num / den))


def volume_factor(scale, k: float, v_eff: float) -> float:
    """Full-volume normalization ``sqrt(|Sigma| / |Sigma_hat|)`` of the plain 3D smoothing filter."""
    s2 = np.asarray(scale, dtype=np.float64) ** 2
    s_hat, _ = filtered_scales(scale, k, v_eff)
    return math.sqrt(float(np.prod(s2 / s_hat)))


def filter_state(g: Gaussian, camera: Camera, k: float = DEFAULT_KERNEL) -> FilterState:
    """Per-frame filter parameters of ``g`` as seen from ``camera``."""
    mean_view = camera.world_to_view[:3, :3] @ g.mean + camera.world_to_view[:3, 3]
    try:
        v_hat = sampling_frequency(camera, mean_view)
    except BehindCamera:
        v_hat = None
    v_eff = effective_frequency(g.v_train, v_hat)
    s_hat, _ = filtered_scales(g.scale, k, v_eff)
    direction = g.mean - camera.center
    norm = float(np.linalg.norm(direction))
    if norm > 0.0:
        amplitude = amplitude_factor(g.scale, g.rotation, direction / norm, k, v_eff)
    else:
        amplitude = volume_factor(g.scale, k, v_eff)
    return FilterState(
        k=k,
        v_hat=g.v_train if v_hat is None else v_hat,
        v_eff=v_eff,
        s_hat=s_hat,
        amplitude=amplitude,
    )
