"""Screen bounds from view-space tangent planes of the cutoff ellipsoid.

Planes through the camera's y axis, ``(cos t, 0, -sin t, 0)``, are pulled back
into Gaussian space and tested for tangency against the sphere ``|u|^2 = tau``.
The tangent angles bound the ellipsoid horizontally; planes through the x axis
give the vertical bounds. Working with angles instead of projected screen
coordinates keeps the result valid when the ellipsoid reaches behind the
image plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from gsrast.core import Camera

DEFAULT_TAU = 9.0
DEFAULT_EPSILON = 1e-4
_S33_ZERO = 1e-12


class AxisState(Enum):
    FINITE = "finite"
    FULL = "full"


@dataclass(frozen=True)
class AxisBounds:
    state: AxisState
    lo: float = 0.0
    hi: float = 0.0

    @property
    def is_full(self) -> bool:
        return self.state is AxisState.FULL


FULL_AXIS = AxisBounds(AxisState.FULL)


@dataclass(frozen=True)
class AngularBounds:
    """Horizontal (theta) and vertical (phi) angle ranges; ``valid`` is False when
    the camera sits inside the ellipsoid."""

    theta: AxisBounds | None
    phi: AxisBounds | None
    valid: bool = True


INVALID = AngularBounds(None, None, valid=False)


@dataclass(frozen=True)
class ScreenRect:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    @property
    def empty(self) -> bool:
        return self.x_min > self.x_max or self.y_min > self.y_max

    def contains(self, x, y):
        return (x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max)


def quadric_coeff(t_view: np.ndarray, i: int, j: int, tau_rho: float) -> float:
    """``<(tau, tau, tau, -1), row_i * row_j>`` for 0-based row indices."""
    a = t_view[i]
    b = t_view[j]
    return tau_rho * float(a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) - float(a[3] * b[3])


def camera_inside(t_view: np.ndarray, tau_rho: float) -> bool:
    """Whether the view-space origin lies inside the cutoff ellipsoid."""
    # T_view = [A | b]; the origin maps to u = -A^-1 b
    g = np.linalg.solve(t_view[:3, :3], -t_view[:3, 3])
    return float(g @ g) < tau_rho


def tangent_roots(s_ii: float, s_i3: float, s_33: float) -> tuple[float, float] | None:
    """The two values of ``tan(angle)`` solving ``s33 t^2 - 2 s_i3 t + s_ii = 0``.

    Returns None when the discriminant is negative or the quadratic degenerates.
    """
    disc = s_i3 * s_i3 - s_ii * s_33
    if disc < 0.0 or abs(s_33) <= _S33_ZERO:
        return None
    root = math.sqrt(disc)
    # cancellation-free pair of roots
    q = s_i3 + math.copysign(root, s_i3)
    if q == 0.0:
        return 0.0, 0.0
    return q / s_33, s_ii / q


def _axis_bounds(s_ii, s_i3, s_33, angle_mean, epsilon) -> AxisBounds:
    roots = tangent_roots(s_ii, s_i3, s_33)
    if roots is None:
        return FULL_AXIS
    a, b = (math.atan(r) for r in roots)
    lo, hi = _around(a, b, angle_mean)
    limit = math.pi / 2.0 - epsilon
    # the interval is narrower than pi, so at most one 2*pi shift meets the front half
    for shift in (0.0, -2.0 * math.pi, 2.0 * math.pi):
        if lo + shift <= limit and hi + shift >= -limit:
            return AxisBounds(AxisState.FINITE, max(-limit, lo + shift), min(limit, hi + shift))
    return AxisBounds(AxisState.FINITE, limit, -limit)


def _around(a: float, b: float, center: float) -> tuple[float, float]:
    """Representatives ``lo < center < hi`` of two angles mod pi, with ``hi - lo < pi``."""
    a_lo = center - math.pi + ((a - center + math.pi) % math.pi)
    b_lo = center - math.pi + ((b - center + math.pi) % math.pi)
    # option 1: a below, b above; option 2: b below, a above
    if (b_lo + math.pi) - a_lo <= (a_lo + math.pi) - b_lo:
        return a_lo, b_lo + math.pi
    return b_lo, a_lo + math.pi


def angular_bounds(t_view: np.ndarray, tau_rho: float = DEFAULT_TAU,
                   epsilon: float = DEFAULT_EPSILON) -> AngularBounds:
    """Angle ranges ``[theta1, theta2]`` and ``[phi1, phi2]`` covering the ellipsoid."""
    if camera_inside(t_view, tau_rho):
        return INVALID
    s11 = quadric_coeff(t_view, 0, 0, tau_rho)
    s22 = quadric_coeff(t_view, 1, 1, tau_rho)
    s33 = quadric_coeff(t_view, 2, 2, tau_rho)
    s13 = quadric_coeff(t_view, 0, 2, tau_rho)
    s23 = quadric_coeff(t_view, 1, 2, tau_rho)
    mean = t_view[:3, 3]
    theta_mu = math.atan2(mean[0], mean[2])
    phi_mu = math.atan2(mean[1], mean[2])
    return AngularBounds(
        theta=_axis_bounds(s11, s13, s33, theta_mu, epsilon),
        phi=_axis_bounds(s22, s23, s33, phi_mu, epsilon),
    )


def unclamped_angles(t_view: np.ndarray, tau_rho: float = DEFAULT_TAU):
    """Raw tangent angles ``(theta_a, theta_b), (phi_a, phi_b)``; None per degenerate axis."""
    s11 = quadric_coeff(t_view, 0, 0, tau_rho)
    s22 = quadric_coeff(t_view, 1, 1, tau_rho)
    s33 = quadric_coeff(t_view, 2, 2, tau_rho)
    s13 = quadric_coeff(t_view, 0, 2, tau_rho)
    s23 = quadric_coeff(t_view, 1, 2, tau_rho)
    out = []
    for s_ii, s_i3 in ((s11, s13), (s22, s23)):
        roots = tangent_roots(s_ii, s_i3, s33)
        out.append(None if roots is None else tuple(math.atan(r) for r in roots))
    return tuple(out)


def angles_to_rect(bounds: AngularBounds, camera: Camera) -> ScreenRect:
    """Pixel-space rectangle of the angle ranges, clipped to the viewport."""
    if not bounds.valid:
        raise ValueError("cannot convert invalid bounds to a rectangle")
    w, h = float(camera.width), float(camera.height)
    if bounds.theta.is_full:
        x_min, x_max = 0.0, w
    else:
        x_min = max(0.0, camera.fx * math.tan(bounds.theta.lo) + camera.cx)
        x_max = min(w, camera.fx * math.tan(bounds.theta.hi) + camera.cx)
    if bounds.phi.is_full:
        y_min, y_max = 0.0, h
    else:
        y_min = max(0.0, camera.fy * math.tan(bounds.phi.lo) + camera.cy)
        y_max = min(h, camera.fy * math.tan(bounds.phi.hi) + camera.cy)
    return ScreenRect(x_min, x_max, y_min, y_max)
