"""Tile-based rasterizer that evaluates every Gaussian exactly in 3D.

Each pixel ray is the intersection of two screen planes. Pulled back into a
Gaussian's unit space, the ray's closest approach to the origin is the point of
maximum contribution; its squared norm is the Mahalanobis distance of that
point. Contributions are sorted per pixel by the depth of that point and
composited front to back.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gsrast import bounding, culling
from gsrast.core import Camera, Gaussian, combined_transform, gaussian_to_world, sh_to_color
from gsrast.filter import DEFAULT_KERNEL, filter_state


@dataclass(frozen=True)
class RenderConfig:
    k: float = DEFAULT_KERNEL
    tau_rho: float = bounding.DEFAULT_TAU
    epsilon_angle: float = bounding.DEFAULT_EPSILON
    tile_size: int = 16
    alpha_cutoff: float = 1.0 / 255.0
    alpha_clamp: float = 0.999
    transmittance_epsilon: float = 1e-4
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # None means an exact per-pixel sort; bounded windows are not implemented
    resort_window: int | None = None
    tile_culling: bool = True
    near_as_plane: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.k < 0.0:
            raise ValueError(f"k must be non-negative, got {self.k}")
        for name in ("tau_rho", "epsilon_angle", "alpha_cutoff", "alpha_clamp", "transmittance_epsilon"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if int(self.tile_size) != self.tile_size or self.tile_size <= 0:
            raise ValueError(f"tile_size must be a positive integer, got {self.tile_size}")
        if not self.alpha_cutoff < self.alpha_clamp <= 1.0:
            raise ValueError("need alpha_cutoff < alpha_clamp <= 1")
        if self.resort_window is not None:
            raise NotImplementedError("only the exact per-pixel sort is available")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))


@dataclass(frozen=True)
class PreparedGaussian:
    index: int
    t_prime: np.ndarray
    t_view: np.ndarray
    t_world: np.ndarray
    amplitude: float
    opacity_eff: float
    rect: bounding.ScreenRect
    mean_view: np.ndarray
    mean_screen: np.ndarray | None
    sh: np.ndarray
    camera_center: np.ndarray

    @property
    def mean_in_front(self) -> bool:
        return self.mean_view[2] > 0.0


@dataclass(frozen=True)
class Contribution:
    rho2: float
    alpha: float
    depth: float
    color: np.ndarray
    source: int


@dataclass
class Framebuffer:
    width: int
    height: int
    rgb: np.ndarray
    transmittance: np.ndarray

    @classmethod
    def blank(cls, width: int, height: int, background=(0.0, 0.0, 0.0)) -> "Framebuffer":
        rgb = np.empty((height, width, 3))
        rgb[:] = np.asarray(background, dtype=np.float64)
        return cls(width, height, rgb, np.ones((height, width)))


@dataclass
class RenderStats:
    input_gaussians: int = 0
    after_view_cull: int = 0
    camera_inside: int = 0
    prepared: int = 0
    rect_pairs: int = 0
    culled_pairs: int = 0
    tile_pairs: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def reduction(self) -> float:
        return 0.0 if self.rect_pairs == 0 else 1.0 - self.tile_pairs / self.rect_pairs


def prepare_gaussian(index: int, g: Gaussian, camera: Camera, config: RenderConfig,
                     stats: RenderStats | None = None) -> PreparedGaussian | None:
    """Filter, cull and bound one Gaussian; None when it cannot contribute."""
    fs = filter_state(g, camera, config.k)
    t_world = gaussian_to_world(g, fs.filtered_std)
    t_view = camera.world_to_view @ t_world
    t_prime = combined_transform(camera, t_world)
    mean_view = t_view[:3, 3].copy()
    in_front = mean_view[2] > 0.0
    mean_screen = t_prime[:2, 3] / t_prime[3, 3] if in_front else None
    if culling.cull_view_frustum(t_prime, t_view, camera.width, camera.height, camera.near,
                                 mean_screen, in_front, config.tau_rho):
        return None
    if stats is not None:
        stats.after_view_cull += 1
    bounds = bounding.angular_bounds(t_view, config.tau_rho, config.epsilon_angle)
    if not bounds.valid:
        if stats is not None:
            stats.camera_inside += 1
        return None
    rect = bounding.angles_to_rect(bounds, camera)
    if rect.empty:
        return None
    opacity_eff = min(g.opacity * fs.amplitude, config.alpha_clamp)
    if opacity_eff < config.alpha_cutoff:
        return None
    return PreparedGaussian(
        index=index,
        t_prime=t_prime,
        t_view=t_view,
        t_world=t_world,
        amplitude=fs.amplitude,
        opacity_eff=opacity_eff,
        rect=rect,
        mean_view=mean_view,
        mean_screen=mean_screen,
        sh=g.sh,
        camera_center=camera.center,
    )


def preprocess(scene, camera: Camera, config: RenderConfig = RenderConfig(),
               stats: RenderStats | None = None) -> list[PreparedGaussian]:
    prepared = []
    for index, g in enumerate(scene):
        pg = prepare_gaussian(index, g, camera, config, stats)
        if pg is not None:
            prepared.append(pg)
    if stats is not None:
        stats.input_gaussians += len(scene)
        stats.prepared += len(prepared)
    return prepared


def tile_grid(camera: Camera, tile_size: int) -> tuple[int, int]:
    return math.ceil(camera.width / tile_size), math.ceil(camera.height / tile_size)


def tile_frustum(camera: Camera, tile_size: int, tx: int, ty: int) -> culling.Frustum:
    return culling.Frustum(
        float(tx * tile_size),
        float(min((tx + 1) * tile_size, camera.width)),
        float(ty * tile_size),
        float(min((ty + 1) * tile_size, camera.height)),
    )


def rect_tiles(rect: bounding.ScreenRect, camera: Camera, tile_size: int):
    """Tiles whose closed extent meets the rectangle."""
    nx, ny = tile_grid(camera, tile_size)
    tx0 = max(0, int(math.floor(rect.x_min / tile_size)))
    tx1 = min(nx - 1, int(math.floor(rect.x_max / tile_size)))
    ty0 = max(0, int(math.floor(rect.y_min / tile_size)))
    ty1 = min(ny - 1, int(math.floor(rect.y_max / tile_size)))
    for ty in range(ty0, ty1 + 1):
        for tx in range(tx0, tx1 + 1):
            yield tx, ty


def bin_to_tiles(prepared, camera: Camera, config: RenderConfig = RenderConfig(),
                 stats: RenderStats | None = None) -> dict[tuple[int, int], list[int]]:
    """Map ``(tx, ty)`` to positions in ``prepared``, in source order."""
    bins: dict[tuple[int, int], list[int]] = {}
    ts = config.tile_size
    for pos, pg in enumerate(prepared):
        for tx, ty in rect_tiles(pg.rect, camera, ts):
            if stats is not None:
                stats.rect_pairs += 1
            if config.tile_culling:
                frustum = tile_frustum(camera, ts, tx, ty)
                if culling.tile_cull(pg.t_prime, pg.t_view, frustum, pg.mean_screen, pg.mean_in_front,
                                     config.tau_rho, near=camera.near, near_as_plane=config.near_as_plane):
                    if stats is not None:
                        stats.culled_pairs += 1
                    continue
            bins.setdefault((tx, ty), []).append(pos)
            if stats is not None:
                stats.tile_pairs += 1
    return bins


def evaluate_block(pg: PreparedGaussian, xs: np.ndarray, ys: np.ndarray, near: float,
                   config: RenderConfig):
    """Vectorized per-pixel evaluation at continuous pixel positions ``(xs, ys)``.

    Returns ``(rho2, alpha, depth, color, valid)``; rejected samples have
    ``alpha == 0`` and ``depth == inf``.
    """
    r0, r1, r3 = pg.t_prime[0], pg.t_prime[1], pg.t_prime[3]
    xs = np.asarray(xs, dtype=np.float64)[..., None]
    ys = np.asarray(ys, dtype=np.float64)[..., None]
    plane_a = r0 - xs * r3
    plane_b = r1 - ys * r3
    na, da = plane_a[..., :3], plane_a[..., 3]
    nb, db = plane_b[..., :3], plane_b[..., 3]
    aa = np.einsum("...i,...i->...", na, na)
    ab = np.einsum("...i,...i->...", na, nb)
    bb = np.einsum("...i,...i->...", nb, nb)
    det = aa * bb - ab * ab
    ok = det > 1e-300
    det = np.where(ok, det, 1.0)
    la = (bb * -da - ab * -db) / det
    lb = (aa * -db - ab * -da) / det
    u = la[..., None] * na + lb[..., None] * nb
    rho2 = np.einsum("...i,...i->...", u, u)
    depth_row = pg.t_view[2]
    depth = u @ depth_row[:3] + depth_row[3]
    alpha = pg.opacity_eff * np.exp(-0.5 * rho2)
    valid = ok & (rho2 < config.tau_rho) & (depth > near) & (alpha >= config.alpha_cutoff)
    if pg.sh.shape[0] == 1:
        color = np.broadcast_to(sh_to_color(pg.sh, np.array([0.0, 0.0, 1.0])), u.shape)
    else:
        world = u @ pg.t_world[:3, :3].T + pg.t_world[:3, 3]
        direction = world - pg.camera_center
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
        color = sh_to_color(pg.sh, direction.reshape(-1, 3)).reshape(u.shape)
    alpha = np.where(valid, alpha, 0.0)
    depth = np.where(valid, depth, np.inf)
    return rho2, alpha, depth, color, valid


def evaluate_pixel(pg: PreparedGaussian, px: int, py: int, near: float,
                   config: RenderConfig = RenderConfig()) -> Contribution | None:
    """Contribution of ``pg`` to pixel ``(px, py)`` or None when rejected."""
    rho2, alpha, depth, color, valid = evaluate_block(
        pg, np.array([px + 0.5]), np.array([py + 0.5]), near, config
    )
    if not valid[0]:
        return None
    return Contribution(float(rho2[0]), float(alpha[0]), float(depth[0]), np.array(color[0]), pg.index)


def blend_pixel(contributions, config: RenderConfig = RenderConfig()):
    """Front-to-back compositing of one pixel; returns ``(rgb, transmittance)``."""
    ordered = sorted(contributions, key=lambda c: (c.depth, c.source))
    accum = np.zeros(3)
    trans = 1.0
    for c in ordered:
        accum += np.asarray(c.color) * c.alpha * trans
        trans *= 1.0 - c.alpha
        if trans < config.transmittance_epsilon:
            break
    return accum + np.asarray(config.background) * trans, trans


def composite(alpha: np.ndarray, depth: np.ndarray, color: np.ndarray, background,
              transmittance_epsilon: float):
    """Vectorized ``blend_pixel`` over many pixels.

    ``alpha`` and ``depth`` have shape ``(n_layers, n_pixels)`` with layers in
    ascending source order, ``color`` has shape ``(n_layers, n_pixels, 3)``.
    Rejected layers carry ``alpha == 0`` and ``depth == inf``.
    """
    n_pixels = alpha.shape[1] if alpha.ndim == 2 else 0
    if alpha.shape[0] == 0:
        rgb = np.empty((n_pixels, 3))
        rgb[:] = np.asarray(background, dtype=np.float64)
        return rgb, np.ones(n_pixels)
    # stable sort keeps source order for equal depths
    order = np.argsort(depth, axis=0, kind="stable")
    a = np.take_along_axis(alpha, order, axis=0)
    c = np.take_along_axis(color, order[..., None], axis=0)
    keep = 1.0 - a
    trans_after = np.cumprod(keep, axis=0)
    trans_before = np.vstack([np.ones((1, a.shape[1])), trans_after[:-1]])
    # once transmittance drops below epsilon, later layers are skipped
    included = np.vstack([np.ones((1, a.shape[1]), dtype=bool), trans_after[:-1] >= transmittance_epsilon])
    included &= np.logical_and.accumulate(included, axis=0)
    weight = np.where(included, a * trans_before, 0.0)
    rgb = np.einsum("lp,lpc->pc", weight, c)
    trans = np.cumprod(np.where(included, keep, 1.0), axis=0)[-1]
    rgb += trans[:, None] * np.asarray(background, dtype=np.float64)
    return rgb, trans


def _render_tile(args):
    prepared, positions, camera, config, tx, ty = args
    ts = config.tile_size
    x0, x1 = tx * ts, min((tx + 1) * ts, camera.width)
    y0, y1 = ty * ts, min((ty + 1) * ts, camera.height)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    xs = xs.reshape(-1) + 0.5
    ys = ys.reshape(-1) + 0.5
    n = xs.size
    alphas = np.zeros((len(positions), n))
    depths = np.full((len(positions), n), np.inf)
    colors = np.zeros((len(positions), n, 3))
    for layer, pos in enumerate(positions):
        _, alpha, depth, color, _ = evaluate_block(prepared[pos], xs, ys, camera.near, config)
        alphas[layer] = alpha
        depths[layer] = depth
        colors[layer] = color
    rgb, trans = composite(alphas, depths, colors, config.background, config.transmittance_epsilon)
    return tx, ty, rgb.reshape(y1 - y0, x1 - x0, 3), trans.reshape(y1 - y0, x1 - x0)


def render_frame(scene, camera: Camera, config: RenderConfig = RenderConfig()):
    """Render and return ``(framebuffer, stats)``."""
    stats = RenderStats()
    prepared = preprocess(scene, camera, config, stats)
    bins = bin_to_tiles(prepared, camera, config, stats)
    fb = Framebuffer.blank(camera.width, camera.height, config.background)
    jobs = [(prepared, positions, camera, config, tx, ty) for (tx, ty), positions in sorted(bins.items())]
    ts = config.tile_size

    def store(result):
        tx, ty, rgb, trans = result
        fb.rgb[ty * ts: ty * ts + rgb.shape[0], tx * ts: tx * ts + rgb.shape[1]] = rgb
        fb.transmittance[ty * ts: ty * ts + rgb.shape[0], tx * ts: tx * ts + rgb.shape[1]] = trans

    if config.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            for result in pool.map(_render_tile, jobs):
                store(result)
    else:
        for job in jobs:
            store(_render_tile(job))
    return fb, stats


def render(scene, camera: Camera, config: RenderConfig = RenderConfig()) -> Framebuffer:
    return render_frame(scene, camera, config)[0]
