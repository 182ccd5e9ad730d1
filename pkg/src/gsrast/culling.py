"""Exact frustum culling by locating the maximum-contribution point of a Gaussian.

A frustum is a set of planes whose interior satisfies ``plane . p >= 0``. Side
planes live in homogeneous pixel space and are pulled back with ``T'^T``; the
optional near plane lives in view space and is pulled back with ``T_view^T``.
In the Gaussian's unit space the density only depends on ``|u|``, so the best
point inside the frustum is the admissible candidate closest to the origin.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

ADMISSIBLE_SLACK = 1e-9
_PARALLEL = 1e-12

# side plane order: x_min, x_max, y_min, y_max
X_MIN, X_MAX, Y_MIN, Y_MAX = range(4)
_ADJACENT_EDGES = ((X_MIN, Y_MIN), (X_MIN, Y_MAX), (X_MAX, Y_MIN), (X_MAX, Y_MAX))


@dataclass(frozen=True)
class Frustum:
    """Screen rectangle ``[x_min, x_max] x [y_min, y_max]`` in pixels, optionally
    closed by the view-space plane ``z = near``."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    near: float | None = None

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate frustum {self}")

    def side_planes(self) -> np.ndarray:
        return np.array(
            [
                [1.0, 0.0, 0.0, -self.x_min],
                [-1.0, 0.0, 0.0, self.x_max],
                [0.0, 1.0, 0.0, -self.y_min],
                [0.0, -1.0, 0.0, self.y_max],
            ]
        )

    def near_plane(self) -> np.ndarray | None:
        if self.near is None:
            return None
        return np.array([0.0, 0.0, 1.0, -self.near])

    def contains_screen(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class MaxContribution:
    rho2: float
    point_unit: np.ndarray | None
    valid: bool


NO_CANDIDATE = MaxContribution(math.inf, None, False)


def transform_plane(m: np.ndarray, plane) -> np.ndarray:
    """Pull a plane back through the point transform ``m``: ``m^T @ plane``."""
    return np.asarray(m, dtype=np.float64).T @ np.asarray(plane, dtype=np.float64)


def closest_point_on_plane(plane) -> tuple[np.ndarray, float]:
    """Point of the plane nearest the origin and its squared distance."""
    n = np.asarray(plane[:3], dtype=np.float64)
    d = float(plane[3])
    nn = float(n @ n)
    return -d * n / nn, d * d / nn


def closest_point_on_line(plane_a, plane_b):
    """Least-norm point on the intersection line of two planes, or None if parallel."""
    na = np.asarray(plane_a[:3], dtype=np.float64)
    nb = np.asarray(plane_b[:3], dtype=np.float64)
    cross = np.cross(na, nb)
    if float(np.linalg.norm(cross)) <= _PARALLEL * max(1.0, float(np.linalg.norm(na) * np.linalg.norm(nb))):
        return None
    aa, ab, bb = float(na @ na), float(na @ nb), float(nb @ nb)
    ra, rb = -float(plane_a[3]), -float(plane_b[3])
    det = aa * bb - ab * ab
    # u = A^T (A A^T)^-1 r
    la = (bb * ra - ab * rb) / det
    lb = (aa * rb - ab * ra) / det
    u = la * na + lb * nb
    return u, float(u @ u)


def closest_point_on_point(plane_a, plane_b, plane_c):
    """Intersection point of three planes, or None when they are (nearly) dependent."""
    a = np.array([plane_a[:3], plane_b[:3], plane_c[:3]], dtype=np.float64)
    det = np.linalg.det(a)
    scale = np.prod(np.linalg.norm(a, axis=1))
    if abs(det) <= _PARALLEL * scale:
        return None
    u = np.linalg.solve(a, -np.array([plane_a[3], plane_b[3], plane_c[3]], dtype=np.float64))
    return u, float(u @ u)


class _Pulled:
    """Frustum planes expressed in one Gaussian's unit space."""

    def __init__(self, t_prime: np.ndarray, t_view: np.ndarray, frustum: Frustum):
        self.sides = (t_prime.T @ frustum.side_planes().T).T
        near = frustum.near_plane()
        self.near = None if near is None else t_view.T @ near
        self.depth_row = t_view[2]
        planes = [self.sides[i] for i in range(4)]
        if self.near is not None:
            planes.append(self.near)
        self.all = np.array(planes)
        self.tol = ADMISSIBLE_SLACK * np.linalg.norm(self.all, axis=1)

    def depth(self, u: np.ndarray) -> float:
        return float(self.depth_row[:3] @ u + self.depth_row[3])

    def admissible(self, u: np.ndarray, skip=()) -> bool:
        if self.depth(u) <= 0.0:
            return False
        values = self.all[:, :3] @ u + self.all[:, 3]
        for i, v in enumerate(values):
            if i not in skip and v < -self.tol[i]:
                return False
        return True


def _best(candidates) -> MaxContribution:
    best = NO_CANDIDATE
    for u, rho2 in candidates:
        if rho2 < best.rho2:
            best = MaxContribution(rho2, u, True)
    return best


def _face_candidates(pulled: _Pulled, faces, edges, vertices=()):
    for i in faces:
        u, rho2 = closest_point_on_plane(pulled.all[i])
        if pulled.admissible(u, skip=(i,)):
            yield u, rho2
    for i, j in edges:
        hit = closest_point_on_line(pulled.all[i], pulled.all[j])
        if hit is not None and pulled.admissible(hit[0], skip=(i, j)):
            yield hit
    for i, j, k in vertices:
        hit = closest_point_on_point(pulled.all[i], pulled.all[j], pulled.all[k])
        if hit is not None and pulled.admissible(hit[0], skip=(i, j, k)):
            yield hit


def _mean_inside(pulled: _Pulled, frustum: Frustum, mean_screen, mean_in_front: bool) -> bool:
    if not mean_in_front or mean_screen is None:
        return False
    if not frustum.contains_screen(float(mean_screen[0]), float(mean_screen[1])):
        return False
    return pulled.near is None or pulled.near[3] >= 0.0


def _full_search(pulled: _Pulled) -> MaxContribution:
    """Every face, every pair of faces and every triple of faces."""
    n = len(pulled.all)
    faces = range(n)
    edges = itertools.combinations(range(n), 2)
    vertices = itertools.combinations(range(n), 3) if n > 4 else ()
    return _best(_face_candidates(pulled, faces, edges, vertices))


def min_rho2_naive(t_prime, t_view, frustum: Frustum, mean_screen, mean_in_front: bool) -> MaxContribution:
    """Reference search: interior test, all 4 side planes and their 4 edges.

    With a near plane every face, edge and vertex of the closed frustum is tried.
    """
    pulled = _Pulled(t_prime, t_view, frustum)
    if _mean_inside(pulled, frustum, mean_screen, mean_in_front):
        return MaxContribution(0.0, np.zeros(3), True)
    if pulled.near is not None:
        return _full_search(pulled)
    return _best(_face_candidates(pulled, range(4), _ADJACENT_EDGES))


def min_rho2_in_frustum(t_prime, t_view, frustum: Frustum, mean_screen, mean_in_front: bool) -> MaxContribution:
    """Minimum squared Mahalanobis distance over the frustum's points in front of the camera.

    For a mean in front of the camera only the vertical and horizontal plane
    nearest to its projection, plus the three edges on them, can hold the
    minimum. A mean behind the camera has no meaningful projection and takes
    the full search.
    """
    pulled = _Pulled(t_prime, t_view, frustum)
    if _mean_inside(pulled, frustum, mean_screen, mean_in_front):
        return MaxContribution(0.0, np.zeros(3), True)
    if pulled.near is not None or not mean_in_front or mean_screen is None:
        if pulled.near is None:
            return _best(_face_candidates(pulled, range(4), _ADJACENT_EDGES))
        return _full_search(pulled)
    mx, my = float(mean_screen[0]), float(mean_screen[1])
    v = X_MIN if abs(mx - frustum.x_min) <= abs(mx - frustum.x_max) else X_MAX
    h = Y_MIN if abs(my - frustum.y_min) <= abs(my - frustum.y_max) else Y_MAX
    v_other = X_MAX if v == X_MIN else X_MIN
    h_other = Y_MAX if h == Y_MIN else Y_MIN
    return _best(_face_candidates(pulled, (v, h), ((v, h), (v, h_other), (v_other, h))))


def depth_of(t_view: np.ndarray, u: np.ndarray) -> float:
    return float(t_view[2, :3] @ u + t_view[2, 3])


def tile_cull(t_prime, t_view, frustum: Frustum, mean_screen, mean_in_front: bool,
              tau_rho: float, near: float | None = None, near_as_plane: bool = False) -> bool:
    """True when the tile receives no contribution above the cutoff.

    With ``near`` given, contributions closer than the near plane do not count.
    By default the near plane only enters when the unrestricted maximum lies in
    front of it; ``near_as_plane`` always searches the 5-plane frustum. Both give
    the same decision.
    """
    if near is not None and near_as_plane:
        closed = Frustum(frustum.x_min, frustum.x_max, frustum.y_min, frustum.y_max, near)
        best = min_rho2_in_frustum(t_prime, t_view, closed, mean_screen, mean_in_front)
        return not best.valid or best.rho2 >= tau_rho
    best = min_rho2_in_frustum(t_prime, t_view, frustum, mean_screen, mean_in_front)
    if not best.valid or best.rho2 >= tau_rho:
        return True
    if near is not None and depth_of(t_view, best.point_unit) <= near:
        closed = Frustum(frustum.x_min, frustum.x_max, frustum.y_min, frustum.y_max, near)
        best = min_rho2_in_frustum(t_prime, t_view, closed, mean_screen, mean_in_front)
        return not best.valid or best.rho2 >= tau_rho
    return False


def cull_view_frustum(t_prime, t_view, width: int, height: int, near: float,
                      mean_screen, mean_in_front: bool, tau_rho: float) -> bool:
    """True when the Gaussian contributes nowhere in the viewport beyond the near plane."""
    frustum = Frustum(0.0, float(width), 0.0, float(height), near)
    best = min_rho2_in_frustum(t_prime, t_view, frustum, mean_screen, mean_in_front)
    return not best.valid or best.rho2 >= tau_rho
