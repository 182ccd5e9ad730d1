"""Brute-force reference renderer.

Every pixel is tested against every Gaussian with no bounding, binning or
culling. The closest approach of each pixel ray is found by minimizing the
Mahalanobis distance along the ray with an explicitly inverted filtered
covariance, which shares no geometry with the plane-based path in ``raster``.
"""

from __future__ import annotations

import math

import numpy as np

from gsrast.core import Camera, covariance, sh_to_color
from gsrast.filter import effective_frequency
from gsrast.raster import Framebuffer, RenderConfig, composite

MIN_VARIANCE = 1e-12


def filtered_covariance(g, camera: Camera, k: float):
    """``(Sigma, Sigma_hat)`` for ``g`` as seen from ``camera``."""
    mean_view = camera.world_to_view[:3, :3] @ g.mean + camera.world_to_view[:3, 3]
    v_hat = camera.focal / mean_view[2] if mean_view[2] > 0.0 else None
    v_eff = effective_frequency(g.v_train, v_hat)
    dilation = 0.0 if math.isinf(v_eff) else k / (v_eff * v_eff)
    sigma = covariance(g.scale, g.rotation)
    return sigma, sigma + dilation * np.eye(3)


def amplitude_matrix(sigma: np.ndarray, sigma_hat: np.ndarray, d: np.ndarray) -> float:
    """``sqrt(|S| d^T S^-1 d / (|S_hat| d^T S_hat^-1 d))`` with explicit inverses."""
    num = np.linalg.det(sigma) * (d @ np.linalg.inv(sigma) @ d)
    den = np.linalg.det(sigma_hat) * (d @ np.linalg.inv(sigma_hat) @ d)
    return math.sqrt(num / den)


def _safe_inverse(sigma_hat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(sigma_hat)
    w = np.maximum(w, MIN_VARIANCE)
    return (v / w) @ v.T


def ray_rho2(origin, directions, mean, precision):
    """Minimum squared Mahalanobis distance along rays ``origin + t * dir``.

    Returns ``(rho2, t_star)``; ``t_star`` ranges over the whole line.
    """
    directions = np.asarray(directions, dtype=np.float64)
    to_mean = np.asarray(mean, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
    pv = directions @ precision
    t_star = (pv @ to_mean) / np.einsum("...i,...i->...", pv, directions)
    residual = np.asarray(origin) + t_star[..., None] * directions - mean
    rho2 = np.einsum("...i,ij,...j->...", residual, precision, residual)
    return rho2, t_star


def pixel_rays(camera: Camera, xs, ys):
    """World-space origin and (unnormalized) directions with unit view depth per ``t``."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    view_dirs = np.stack([(xs - camera.cx) / camera.fx, (ys - camera.cy) / camera.fy, np.ones_like(xs)], axis=-1)
    rot = camera.world_to_view[:3, :3]
    return camera.center, view_dirs @ rot


def render_reference(scene, camera: Camera, config: RenderConfig = RenderConfig()) -> Framebuffer:
    w, h = camera.width, camera.height
    ys, xs = np.mgrid[0:h, 0:w]
    origin, dirs = pixel_rays(camera, xs.reshape(-1) + 0.5, ys.reshape(-1) + 0.5)
    n_pix = w * h
    layers_alpha, layers_depth, layers_color = [], [], []
    for g in scene:
        sigma, sigma_hat = filtered_covariance(g, camera, config.k)
        precision = _safe_inverse(sigma_hat)
        to_camera = origin - g.mean
        if float(to_camera @ precision @ to_camera) < config.tau_rho:
            # camera inside the cutoff ellipsoid: the pipeline discards these
            continue
        d = g.mean - origin
        d = d / np.linalg.norm(d)
        opacity = min(g.opacity * min(1.0, amplitude_matrix(sigma, sigma_hat, d)), config.alpha_clamp)
        rho2, t_star = ray_rho2(origin, dirs, g.mean, precision)
        # directions have unit view-space z, so t is the view depth
        depth = t_star
        alpha = opacity * np.exp(-0.5 * rho2)
        valid = (rho2 < config.tau_rho) & (depth > camera.near) & (alpha >= config.alpha_cutoff)
        if not np.any(valid):
            continue
        if g.sh.shape[0] == 1:
            color = np.broadcast_to(sh_to_color(g.sh, np.array([0.0, 0.0, 1.0])), (n_pix, 3))
        else:
            points = origin + t_star[:, None] * dirs
            direction = points - origin
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            color = sh_to_color(g.sh, direction)
        layers_alpha.append(np.where(valid, alpha, 0.0))
        layers_depth.append(np.where(valid, depth, np.inf))
        layers_color.append(color)
    if layers_alpha:
        rgb, trans = composite(np.array(layers_alpha), np.array(layers_depth), np.array(layers_color),
                               config.background, config.transmittance_epsilon)
    else:
        rgb, trans = composite(np.zeros((0, n_pix)), np.zeros((0, n_pix)), np.zeros((0, n_pix, 3)),
                               config.background, config.transmittance_epsilon)
    return Framebuffer(w, h, rgb.reshape(h, w, 3), trans.reshape(h, w))
