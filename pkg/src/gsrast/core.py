"""Domain types and transforms shared by the whole renderer.

Conventions used everywhere in the package:

* view space is right-handed, the camera looks along +z, image y grows downward;
* pixel ``(i, j)`` has its continuous center at ``(i + 0.5, j + 0.5)``;
* ``M_vp @ P @ V`` maps homogeneous world points so that dividing by ``w``
  yields pixel coordinates, and ``w`` equals the view-space depth;
* quaternions are stored ``(w, x, y, z)`` and composed with the Hamilton product.

All geometry runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Real SH basis constants, same values as the reference 3DGS exporter.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

SH_COEFFS_PER_DEGREE = {0: 1, 1: 4, 2: 9, 3: 16}


class ValidationError(ValueError):
    """Raised when a Gaussian or camera violates its invariants."""


def _vec(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape != (n,):
        raise ValidationError(f"{name} must have {n} components, got shape {np.shape(values)}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries: {arr}")
    arr.flags.writeable = False
    return arr


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


@dataclass(frozen=True)
class Gaussian:
    """One scene primitive, with activations already applied.

    ``sh`` holds spherical-harmonic coefficients with shape ``(n, 3)``, row 0
    being the DC term; ``n`` is 1, 4, 9 or 16. ``v_train`` is the largest
    sampling frequency (pixels per world unit) seen in training, ``inf`` when
    unknown.
    """

    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    sh: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    v_train: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "mean", _vec(self.mean, 3, "mean"))
        scale = _vec(self.scale, 3, "scale")
        if np.any(scale <= 0.0):
            raise ValidationError(f"scale must be positive, got {scale}")
        object.__setattr__(self, "scale", scale)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(-1)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ValidationError(f"rotation must be 4 finite values, got {self.rotation}")
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise ValidationError("rotation quaternion has zero norm")
        object.__setattr__(self, "rotation", _vec(q / norm, 4, "rotation"))
        opacity = float(self.opacity)
        if not 0.0 < opacity < 1.0:
            raise ValidationError(f"opacity must lie in (0, 1), got {opacity}")
        object.__setattr__(self, "opacity", opacity)
        sh = np.asarray(self.sh, dtype=np.float64)
        if sh.ndim == 1:
            sh = sh.reshape(-1, 3)
        if sh.ndim != 2 or sh.shape[1] != 3 or sh.shape[0] not in (1, 4, 9, 16):
            raise ValidationError(f"sh must have shape (1|4|9|16, 3), got {sh.shape}")
        if not np.all(np.isfinite(sh)):
            raise ValidationError("sh has non-finite entries")
        sh = sh.copy()
        sh.flags.writeable = False
        object.__setattr__(self, "sh", sh)
        v_train = float(self.v_train)
        if not v_train > 0.0:
            raise ValidationError(f"v_train must be positive or inf, got {v_train}")
        object.__setattr__(self, "v_train", v_train)

    @property
    def sh_degree(self) -> int:
        return {1: 0, 4: 1, 9: 2, 16: 3}[self.sh.shape[0]]

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotation(self.rotation)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. ``world_to_view`` is a rigid 4x4 transform."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_view: np.ndarray
    near: float = 0.01

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValidationError("width and height must be integers")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"image size must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        for name in ("fx", "fy", "near"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0.0):
                raise ValidationError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        cx, cy = float(self.cx), float(self.cy)
        if not 0.0 < cx < self.width or not 0.0 < cy < self.height:
            raise ValidationError(
                f"principal point ({cx}, {cy}) outside the open image rectangle"
            )
        object.__setattr__(self, "cx", cx)
        object.__setattr__(self, "cy", cy)
        m = np.array(self.world_to_view, dtype=np.float64)
        if m.shape != (4, 4) or not np.all(np.isfinite(m)):
            raise ValidationError("world_to_view must be a finite 4x4 matrix")
        rot = m[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
            raise ValidationError("world_to_view rotation block is not a proper rotation")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValidationError("world_to_view bottom row must be (0, 0, 0, 1)")
        m.flags.writeable = False
        object.__setattr__(self, "world_to_view", m)

    @property
    def focal(self) -> float:
        return max(self.fx, self.fy)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space."""
        rot = self.world_to_view[:3, :3]
        return -rot.T @ self.world_to_view[:3, 3]

    @property
    def view_to_world(self) -> np.ndarray:
        rot = self.world_to_view[:3, :3]
        inv = np.eye(4)
        inv[:3, :3] = rot.T
        inv[:3, 3] = -rot.T @ self.world_to_view[:3, 3]
        return inv

    def projection(self) -> np.ndarray:
        """Perspective matrix to clip space with ``w = z_view`` and infinite far plane."""
        w, h = self.width, self.height
        return np.array(
            [
                [2.0 * self.fx / w, 0.0, 2.0 * self.cx / w - 1.0, 0.0],
                [0.0, 2.0 * self.fy / h, 2.0 * self.cy / h - 1.0, 0.0],
                [0.0, 0.0, 1.0, -2.0 * self.near],
                [0.0, 0.0, 1.0, 0.0],
            ]
        )

    def viewport(self) -> np.ndarray:
        """Maps NDC x, y in [-1, 1] to [0, width] x [0, height]."""
        w, h = self.width, self.height
        return np.array(
            [
                [w / 2.0, 0.0, 0.0, w / 2.0],
                [0.0, h / 2.0, 0.0, h / 2.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )

    def full_transform(self) -> np.ndarray:
        """``M_vp @ P @ V``: world homogeneous point to pixel homogeneous point."""
        return self.viewport() @ self.projection() @ self.world_to_view

    def project(self, point_world) -> np.ndarray:
        """Pinhole projection of a world point to pixel coordinates (z must be > 0)."""
        p = self.world_to_view[:3, :3] @ np.asarray(point_world, dtype=np.float64)
        p = p + self.world_to_view[:3, 3]
        return np.array([self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy])


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """World-to-view matrix for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear at the top of the image,
    i.e. along view-space -y.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    down = -np.asarray(up, dtype=np.float64)
    right = np.cross(down, forward)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("up vector is parallel to the viewing direction")
    right /= nr
    down = np.cross(forward, right)
    m = np.eye(4)
    m[0, :3] = right
    m[1, :3] = down
    m[2, :3] = forward
    m[:3, 3] = -m[:3, :3] @ eye
    return m


def covariance(scale, rotation) -> np.ndarray:
    """``R S S^T R^T`` for scale ``s`` and quaternion ``q``."""
    rot = quat_to_rotation(np.asarray(rotation, dtype=np.float64))
    m = rot * np.asarray(scale, dtype=np.float64)
    return m @ m.T


def gaussian_to_world(g: Gaussian, scale_override=None) -> np.ndarray:
    """Affine map from the unit Gaussian space to world space."""
    scale = g.scale if scale_override is None else np.asarray(scale_override, dtype=np.float64)
    t = np.eye(4)
    t[:3, :3] = g.rotation_matrix * scale
    t[:3, 3] = g.mean
    return t


def combined_transform(camera: Camera, t: np.ndarray) -> np.ndarray:
    """``M_vp P V T``; its rows are pulled back individually for plane tests."""
    return camera.full_transform() @ t


def evaluate_density(g: Gaussian, x) -> float:
    """``exp(-rho^2 / 2)`` through an explicit inverse covariance.

    Only test oracles call this; the render path never inverts the covariance.
    """
    diff = np.asarray(x, dtype=np.float64) - g.mean
    cov = covariance(g.scale, g.rotation)
    rho2 = float(diff @ np.linalg.solve(cov, diff))
    return math.exp(-0.5 * rho2)


def sh_to_color(sh, direction) -> np.ndarray:
    """Evaluate view-dependent color, offset by 0.5 and clamped to [0, 1].

    ``direction`` may be a single unit vector or an ``(n, 3)`` array, in which
    case an ``(n, 3)`` array of colors is returned.
    """
    sh = np.asarray(sh, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    n_coeffs = sh.shape[0]
    result = np.broadcast_to(SH_C0 * sh[0], d.shape).copy()
    if n_coeffs > 1:
        x, y, z = d[:, 0:1], d[:, 1:2], d[:, 2:3]
        result += -SH_C1 * y * sh[1] + SH_C1 * z * sh[2] - SH_C1 * x * sh[3]
        if n_coeffs > 4:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            result += (
                SH_C2[0] * xy * sh[4]
                + SH_C2[1] * yz * sh[5]
                + SH_C2[2] * (2.0 * zz - xx - yy) * sh[6]
                + SH_C2[3] * xz * sh[7]
                + SH_C2[4] * (xx - yy) * sh[8]
            )
            if n_coeffs > 9:
                result += (
                    SH_C3[0] * y * (3.0 * xx - yy) * sh[9]
                    + SH_C3[1] * xy * z * sh[10]
                    + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[11]
                    + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[12]
                    + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[13]
                    + SH_C3[5] * z * (xx - yy) * sh[14]
                    + SH_C3[6] * x * (xx - 3.0 * yy) * sh[15]
                )
    result = np.clip(result + 0.5, 0.0, 1.0)
    return result[0] if single else result


def rgb_to_sh_dc(rgb) -> np.ndarray:
    """DC coefficient that reproduces a base color under ``sh_to_color``."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0
