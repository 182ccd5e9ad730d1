import math

import numpy as np
import pytest

from gsrast.core import Camera, Gaussian, evaluate_density, look_at
from gsrast.oracle import render_reference
from gsrast.raster import (
    Contribution,
    RenderConfig,
    RenderStats,
    bin_to_tiles,
    blend_pixel,
    evaluate_pixel,
    preprocess,
    rect_tiles,
    render,
    render_frame,
)
from gsrast.synth import random_gaussians
from helpers import basic_camera, gaussian_at_view, golden_min, random_quat


def small_scene(seed=0, n=40):
    return random_gaussians(np.random.default_rng(seed), n)


def front_camera(size=48, focal=50.0, cx=None, cy=None):
    w2v = look_at([0.2, -0.3, -2.5], [0.0, 0.0, 0.0], up=(0, 1, 0))
    return Camera(size, size, focal, focal, size / 2 if cx is None else cx, size / 2 if cy is None else cy,
                  w2v, near=0.05)


def scene_through_image_plane(rng, n=25):
    """Gaussians near a camera at the origin, several of them crossing z = 0."""
    out = []
    for _ in range(n):
        mean = [rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 3.0)]
        scale = np.exp(rng.uniform(math.log(0.05), math.log(1.0), 3))
        g = Gaussian(mean, scale, random_quat(rng), rng.uniform(0.3, 0.9),
                     rng.uniform(-1, 1, (1, 3)))
        # the camera must stay outside every cutoff ellipsoid
        d = -g.mean
        rot = g.rotation_matrix
        if np.sum((rot.T @ d / g.scale) ** 2) > 9.0 * 1.2:
            out.append(g)
    return out


def test_preprocess_empty_scene():
    assert preprocess([], basic_camera()) == []


def test_preprocess_single_on_axis():
    cam = basic_camera(width=64, height=64, fx=60.0, fy=60.0)
    prepared = preprocess([gaussian_at_view([0, 0, 4.0], [0.2, 0.2, 0.2])], cam, RenderConfig(k=0.0))
    assert len(prepared) == 1
    r = prepared[0].rect
    assert 0.5 * (r.x_min + r.x_max) == pytest.approx(32.0)
    assert 0.5 * (r.y_min + r.y_max) == pytest.approx(32.0)


def test_preprocess_keeps_gaussian_behind_image_plane():
    cam = basic_camera(width=64, height=64, fx=40.0, fy=40.0, near=0.01)
    g = gaussian_at_view([1.5, 0.0, -1.0], [0.3, 0.3, 2.0], opacity=0.9)
    config = RenderConfig(k=0.0)
    prepared = preprocess([g], cam, config)
    assert len(prepared) == 1 and not prepared[0].mean_in_front
    ref = render_reference([g], cam, config)
    assert (ref.transmittance < 1.0).any()
    np.testing.assert_allclose(render([g], cam, config).rgb, ref.rgb, atol=1e-9)


def test_binning_single_tile():
    cam = basic_camera(width=64, height=64, fx=60.0, fy=60.0)
    g = gaussian_at_view([-0.05, -0.05, 6.0], [0.01, 0.01, 0.01])
    prepared = preprocess([g], cam, RenderConfig(k=0.0))
    bins = bin_to_tiles(prepared, cam, RenderConfig(k=0.0))
    assert bins == {(1, 1): [0]}


def diagonal_fixture():
    cam = basic_camera(width=128, height=128, fx=100.0, fy=100.0)
    c, s = math.cos(math.pi / 8), math.sin(math.pi / 8)
    # rotated 45 degrees about the view axis, long along the image diagonal
    g = gaussian_at_view([0.0, 0.0, 5.0], [1.0, 0.03, 0.03], rotation=(c, 0.0, 0.0, s))
    return cam, g


def test_diagonal_gaussian_loses_corner_tiles():
    cam, g = diagonal_fixture()
    config = RenderConfig(k=0.0)
    prepared = preprocess([g], cam, config)
    stats = RenderStats()
    culled = bin_to_tiles(prepared, cam, config, stats)
    plain = bin_to_tiles(prepared, cam, RenderConfig(k=0.0, tile_culling=False))
    assert set(culled) <= set(plain)
    assert len(culled) < len(plain)
    # the off-diagonal corners of the rect are dropped
    xs = [tx for tx, _ in plain]
    ys = [ty for _, ty in plain]
    corners = {(min(xs), max(ys)), (max(xs), min(ys))}
    assert max(xs) - min(xs) >= 3
    assert corners <= set(plain) and not corners & set(culled)
    assert stats.tile_pairs < stats.rect_pairs
    np.testing.assert_array_equal(render([g], cam, config).rgb, render([g], cam, RenderConfig(k=0.0, tile_culling=False)).rgb)


def test_culling_only_removes_assignments():
    cam = front_camera()
    scene = small_scene(1)
    prepared = preprocess(scene, cam)
    with_cull = bin_to_tiles(prepared, cam, RenderConfig(tile_size=8))
    without = bin_to_tiles(prepared, cam, RenderConfig(tile_size=8, tile_culling=False))
    for tile, positions in with_cull.items():
        assert set(positions) <= set(without[tile])
        assert positions == sorted(positions)


def test_evaluate_pixel_at_projected_mean():
    cam = basic_camera(width=64, height=64, fx=60.0, fy=60.0)
    config = RenderConfig(k=0.0)
    # pixel (31, 31) has its centre at (31.5, 31.5); put the mean there
    g = gaussian_at_view([-0.5 * 4.0 / 60.0, -0.5 * 4.0 / 60.0, 4.0], [0.3, 0.3, 0.3], opacity=0.7)
    pg = preprocess([g], cam, config)[0]
    c = evaluate_pixel(pg, 31, 31, cam.near, config)
    assert c.rho2 == pytest.approx(0.0, abs=1e-20)
    assert c.alpha == pytest.approx(0.7)
    assert c.depth == pytest.approx(4.0)


def test_evaluate_pixel_far_outside_rect():
    cam = basic_camera(width=64, height=64, fx=60.0, fy=60.0)
    g = gaussian_at_view([0.0, 0.0, 4.0], [0.02, 0.02, 0.02])
    pg = preprocess([g], cam, RenderConfig(k=0.0))[0]
    assert not pg.rect.contains(2.5, 60.5)
    assert evaluate_pixel(pg, 2, 60, cam.near) is None


def test_evaluate_pixel_matches_line_search():
    rng = np.random.default_rng(2)
    config = RenderConfig(k=0.0)
    checked = 0
    for _ in range(60):
        cam = front_camera(32, 30.0)
        g = Gaussian(rng.uniform(-0.5, 0.5, 3), np.exp(rng.uniform(-2.5, -0.5, 3)), random_quat(rng), 0.8)
        prepared = preprocess([g], cam, config)
        if not prepared:
            continue
        pg = prepared[0]
        for _ in range(10):
            px, py = rng.integers(0, 32, 2)
            c = evaluate_pixel(pg, px, py, cam.near, config)
            if c is None:
                continue
            direction = cam.view_to_world[:3, :3] @ [(px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0]

            def neg_log_density(t):
                return -2.0 * math.log(max(evaluate_density(g, cam.center + t * direction), 1e-300))

            t_best, rho2 = golden_min(neg_log_density, 0.0, 10.0)
            assert c.rho2 == pytest.approx(rho2, abs=1e-6)
            assert c.depth == pytest.approx(t_best, abs=1e-4)
            checked += 1
    assert checked > 50


def test_blend_examples():
    config = RenderConfig(background=(0.2, 0.4, 0.6))
    rgb, trans = blend_pixel([], config)
    np.testing.assert_array_equal(rgb, [0.2, 0.4, 0.6])
    assert trans == 1.0
    c = Contribution(0.0, 0.25, 1.0, np.array([1.0, 0.0, 0.5]), 0)
    rgb, trans = blend_pixel([c], config)
    np.testing.assert_allclose(rgb, 0.25 * c.color + 0.75 * np.array([0.2, 0.4, 0.6]))
    assert trans == 0.75


def test_blend_is_order_independent():
    a = Contribution(1.0, 0.5, 2.0, np.array([1.0, 0.0, 0.0]), 0)
    b = Contribution(0.5, 0.6, 1.0, np.array([0.0, 1.0, 0.0]), 1)
    tie = Contribution(0.5, 0.3, 1.0, np.array([0.0, 0.0, 1.0]), 2)
    ref = blend_pixel([a, b, tie])
    for order in ([b, a, tie], [tie, b, a], [a, tie, b]):
        out = blend_pixel(order)
        np.testing.assert_array_equal(out[0], ref[0])
        assert out[1] == ref[1]
    # nearer contribution is composited first
    np.testing.assert_allclose(ref[0], [0.5 * 0.4 * 0.7, 0.6, 0.3 * 0.4])


def test_blend_stops_at_low_transmittance():
    layers = [Contribution(0.0, 0.99, float(i), np.ones(3), i) for i in range(4)]
    rgb, trans = blend_pixel(layers)
    # after two layers T = 1e-4 which is not below epsilon; the third drops it below
    assert trans == pytest.approx(0.01**3)


def test_render_empty_scene_is_background():
    cam = basic_camera()
    fb = render([], cam, RenderConfig(background=(0.1, 0.2, 0.3)))
    assert fb.rgb.shape == (48, 64, 3)
    np.testing.assert_array_equal(fb.rgb, np.broadcast_to([0.1, 0.2, 0.3], fb.rgb.shape))
    np.testing.assert_array_equal(fb.transmittance, 1.0)


def test_render_matches_oracle_with_view_dependent_color():
    rng = np.random.default_rng(3)
    scene = [Gaussian(g.mean, g.scale, g.rotation, g.opacity, rng.normal(scale=0.3, size=(16, 3)))
             for g in small_scene(3, 30)]
    cam = front_camera(40, 45.0)
    fb = render(scene, cam)
    ref = render_reference(scene, cam)
    assert np.abs(fb.rgb - ref.rgb).max() <= 1e-6
    assert (fb.transmittance >= 0).all() and (fb.transmittance <= 1).all()
    assert np.isfinite(fb.rgb).all()


@pytest.mark.parametrize("tile_size", [8, 32])
def test_tiling_invariance(tile_size):
    cam = front_camera(48, 50.0)
    scene = small_scene(4)
    base = render(scene, cam, RenderConfig(tile_size=16))
    other = render(scene, cam, RenderConfig(tile_size=tile_size))
    assert np.abs(base.rgb - other.rgb).max() <= 1e-6


def test_threads_are_deterministic():
    cam = front_camera(48, 50.0)
    scene = small_scene(5)
    a = render(scene, cam, RenderConfig(tile_size=8, threads=1))
    b = render(scene, cam, RenderConfig(tile_size=8, threads=4))
    np.testing.assert_array_equal(a.rgb, b.rgb)
    np.testing.assert_array_equal(a.transmittance, b.transmittance)


def test_roll_by_90_degrees_rotates_pixels():
    size = 40
    cam = front_camera(size, 45.0)
    roll = np.eye(4)
    roll[:3, :3] = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
    rolled = Camera(size, size, 45.0, 45.0, size / 2, size / 2, roll @ cam.world_to_view, cam.near)
    scene = small_scene(6)
    a = render(scene, cam).rgb
    b = render(scene, rolled).rgb
    # view (x, y) -> (-y, x): new pixel (col, row) = (W - 1 - row_old, col_old)
    rows, cols = np.mgrid[0:size, 0:size]
    expected = a[size - 1 - cols, rows]
    assert np.abs(b - expected).max() <= 1e-5


def test_fov_crop_equality_with_gaussians_behind_image_plane():
    rng = np.random.default_rng(7)
    scene = scene_through_image_plane(rng)
    w, h, f = 24, 20, 20.0
    base = Camera(w, h, f, f, w / 2, h / 2, np.eye(4), near=0.05)
    wide = Camera(3 * w, 3 * h, f, f, w / 2 + w, h / 2 + h, np.eye(4), near=0.05)
    config = RenderConfig(tile_size=8)
    a = render(scene, base, config)
    b = render(scene, wide, config)
    assert np.abs(b.rgb[h: 2 * h, w: 2 * w] - a.rgb).max() <= 1e-6
    # something reaches across the near side of the frame
    assert (a.transmittance < 1.0).mean() > 0.2


def test_render_stats_count_pairs():
    cam = front_camera()
    _, stats = render_frame(small_scene(8), cam)
    assert stats.input_gaussians == 40
    assert stats.prepared <= stats.after_view_cull <= stats.input_gaussians
    assert stats.tile_pairs + stats.culled_pairs == stats.rect_pairs
    assert 0.0 <= stats.reduction <= 1.0


def test_rect_tiles_cover_rect():
    cam = basic_camera(width=64, height=48)
    from gsrast.bounding import ScreenRect

    tiles = set(rect_tiles(ScreenRect(10.0, 33.0, 0.0, 47.9), cam, 16))
    assert tiles == {(tx, ty) for tx in range(3) for ty in range(3)}


def test_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(k=-1.0)
    with pytest.raises(ValueError):
        RenderConfig(alpha_cutoff=0.5, alpha_clamp=0.4)
    with pytest.raises(NotImplementedError):
        RenderConfig(resort_window=4)
