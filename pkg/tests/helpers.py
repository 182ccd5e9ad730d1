"""Random fixtures and brute-force oracles shared by the tests."""

from __future__ import annotations

import math

import numpy as np

from gsrast.core import Camera, Gaussian, covariance, gaussian_to_world, look_at, quat_to_rotation


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_spd(rng, lo=1e-2, hi=10.0):
    scale = np.exp(rng.uniform(math.log(lo), math.log(hi), 3))
    return covariance(scale, random_quat(rng))


def random_unit(rng):
    d = rng.normal(size=3)
    return d / np.linalg.norm(d)


def basic_camera(width=64, height=48, fx=60.0, fy=55.0, cx=None, cy=None, w2v=None, near=0.01):
    return Camera(width, height, fx, fy, width / 2.0 if cx is None else cx,
                  height / 2.0 if cy is None else cy, np.eye(4) if w2v is None else w2v, near)


def gaussian_at_view(mean_view, scale, rotation=(1.0, 0.0, 0.0, 0.0), opacity=0.8, sh=None):
    """Gaussian placed directly in view space (camera with identity world_to_view)."""
    return Gaussian(mean_view, scale, rotation, opacity, np.zeros((1, 3)) if sh is None else sh)


def transforms(g: Gaussian, camera: Camera, std=None):
    """``(t_world, t_view, t_prime)`` for ``g`` with optional scale override."""
    t_world = gaussian_to_world(g, std)
    t_view = camera.world_to_view @ t_world
    t_prime = camera.full_transform() @ t_world
    return t_world, t_view, t_prime


def precision_of(g: Gaussian, std=None):
    std = g.scale if std is None else np.asarray(std)
    rot = quat_to_rotation(g.rotation)
    return rot @ np.diag(1.0 / std**2) @ rot.T


def ray_rho2_grid(g: Gaussian, camera: Camera, xs, ys, std=None):
    """Brute-force line minimum of the Mahalanobis distance along pixel rays.

    Returns ``(rho2, t_star)``; ``t_star`` is the view depth of the minimizer.
    """
    prec = precision_of(g, std)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    dirs_view = np.stack([(xs - camera.cx) / camera.fx, (ys - camera.cy) / camera.fy, np.ones_like(xs)], -1)
    dirs = dirs_view @ camera.world_to_view[:3, :3]
    o = camera.center
    m = g.mean - o
    pd = dirs @ prec
    t = (pd @ m) / np.einsum("...i,...i->...", pd, dirs)
    r = t[..., None] * dirs - m
    rho2 = np.einsum("...i,ij,...j->...", r, prec, r)
    return rho2, t


def random_scene_case(rng, camera: Camera, tau=9.0, behind_fraction=0.3):
    """A Gaussian around the camera's view, the camera kept outside its cutoff ellipsoid.

    Some cases put the mean behind the camera or close to the image plane.
    """
    while True:
        scale = np.exp(rng.uniform(math.log(0.02), math.log(1.5), 3))
        q = random_quat(rng)
        if rng.uniform() < behind_fraction:
            z = rng.uniform(-2.0, 0.5)
        else:
            z = rng.uniform(0.5, 8.0)
        x = rng.uniform(-1.2, 1.2) * max(abs(z), 0.5)
        y = rng.uniform(-1.2, 1.2) * max(abs(z), 0.5)
        mean_view = np.array([x, y, z])
        mean_world = camera.view_to_world[:3, :3] @ mean_view + camera.view_to_world[:3, 3]
        g = Gaussian(mean_world, scale, q, 0.7)
        prec = precision_of(g)
        d = camera.center - g.mean
        if d @ prec @ d > tau * 1.05:
            return g


def random_camera(rng, width=48, height=40):
    eye = rng.normal(size=3) * 0.3
    target = eye + random_unit(rng)
    up = random_unit(rng)
    w2v = look_at(eye, target, up)
    fx = rng.uniform(25.0, 80.0)
    fy = fx * rng.uniform(0.8, 1.25)
    cx = width / 2.0 + rng.uniform(-5, 5)
    cy = height / 2.0 + rng.uniform(-5, 5)
    return Camera(width, height, fx, fy, cx, cy, w2v, near=0.05)


def golden_min(f, lo, hi, iters=200):
    """Golden-section minimization of a unimodal scalar function."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)
