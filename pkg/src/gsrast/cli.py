"""Command-line interface.

Subcommands: ``render``, ``oracle-render``, ``compare``, ``stats``, ``synth``.
Settings resolve as command-line flags, then ``--config`` file, then defaults.
The config file holds one ``key = value`` per line; ``#`` starts a comment.

Exit codes: 0 success, 1 comparison failure, 2 usage error, 3 IO or parse error.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
import time
from pathlib import Path

import numpy as np

from gsrast import oracle, raster
from gsrast.core import Camera, ValidationError
from gsrast.filter import max_training_frequency
from gsrast.io import (
    SceneFormatError,
    load_cameras,
    load_float_image,
    load_ply,
    psnr,
    write_cameras,
    write_image,
    write_ply,
)
from gsrast.synth import synth_scene

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "scene": None,
    "cameras": None,
    "train_cameras": None,
    "out": None,
    "k": 0.3,
    "tau_rho": 9.0,
    "epsilon_angle": 1e-4,
    "tile_size": 16,
    "alpha_cutoff": 1.0 / 255.0,
    "alpha_clamp": 0.999,
    "transmittance_epsilon": 1e-4,
    "background": "0,0,0",
    "fov_scale": 1.0,
    "res_scale": 1.0,
    "threads": 1,
    "seed": 0,
    "tolerance": 1e-6,
    "camera_id": None,
    "train_visibility": "visible",
    "near_as_plane": False,
    "tile_culling": True,
}

_TYPES = {
    "k": float, "tau_rho": float, "epsilon_angle": float, "tile_size": int,
    "alpha_cutoff": float, "alpha_clamp": float, "transmittance_epsilon": float,
    "fov_scale": float, "res_scale": float, "threads": int, "seed": int,
    "tolerance": float,
}


class UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over config-file values over defaults."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            file_values = read_config_file(args.config)
        except OSError as exc:
            raise SceneFormatError(f"cannot read config {args.config}: {exc}") from None
        for key, value in file_values.items():
            if key in _TYPES:
                settings[key] = _TYPES[key](value)
            elif key in ("near_as_plane", "tile_culling"):
                settings[key] = _parse_bool(value)
            elif key == "camera_id":
                settings[key] = [v.strip() for v in value.split(",") if v.strip()]
            else:
                settings[key] = value
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def render_config(settings: dict) -> raster.RenderConfig:
    try:
        background = tuple(float(c) for c in str(settings["background"]).split(","))
    except ValueError:
        raise UsageError(f"bad --background {settings['background']!r}") from None
    if len(background) != 3:
        raise UsageError("--background takes three comma-separated values")
    try:
        return raster.RenderConfig(
            k=settings["k"],
            tau_rho=settings["tau_rho"],
            epsilon_angle=settings["epsilon_angle"],
            tile_size=settings["tile_size"],
            alpha_cutoff=settings["alpha_cutoff"],
            alpha_clamp=settings["alpha_clamp"],
            transmittance_epsilon=settings["transmittance_epsilon"],
            background=background,
            tile_culling=settings["tile_culling"],
            near_as_plane=settings["near_as_plane"],
            threads=settings["threads"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def scale_camera(camera: Camera, fov_scale: float = 1.0, res_scale: float = 1.0) -> Camera:
    """Widen the field of view by ``fov_scale`` about the image center, then resample by ``res_scale``.

    ``fov_scale`` divides the focal length at fixed resolution; ``res_scale``
    multiplies resolution, focal length and principal point. Both at 3 keep the
    focal length, triple the resolution and move the principal point by
    ``(width, height)``, so the original image is the exact central crop.
    """
    if fov_scale <= 0.0 or res_scale <= 0.0:
        raise UsageError("scale factors must be positive")
    fx, fy = camera.fx / fov_scale, camera.fy / fov_scale
    cx = (camera.cx - camera.width / 2.0) / fov_scale + camera.width / 2.0
    cy = (camera.cy - camera.height / 2.0) / fov_scale + camera.height / 2.0
    width = camera.width * res_scale
    height = camera.height * res_scale
    if abs(width - round(width)) > 1e-9 or abs(height - round(height)) > 1e-9:
        raise UsageError(f"--res-scale {res_scale} gives a fractional image size {width}x{height}")
    return Camera(round(width), round(height), fx * res_scale, fy * res_scale, cx * res_scale,
                  cy * res_scale, camera.world_to_view, camera.near)


def _require(settings, *keys):
    for key in keys:
        if not settings.get(key):
            raise UsageError(f"--{key.replace('_', '-')} is required")


def load_inputs(settings: dict):
    """Scene (with training frequencies applied) and the selected camera entries."""
    _require(settings, "scene", "cameras", "out")
    for key in ("scene", "cameras", "train_cameras"):
        if settings.get(key) and not Path(settings[key]).is_file():
            raise FileNotFoundError(f"{key.replace('_', ' ')} file not found: {settings[key]}")
    scene = load_ply(settings["scene"]).gaussians
    cameras = load_cameras(settings["cameras"])
    if settings.get("train_cameras"):
        train = load_cameras(settings["train_cameras"]).cameras
        visible = settings["train_visibility"] == "visible"
        scene = [dataclasses.replace(g, v_train=max_training_frequency(g, train, visible)) for g in scene]
    entries = list(cameras)
    if settings.get("camera_id"):
        wanted = set(settings["camera_id"])
        entries = [e for e in entries if e.id in wanted]
        missing = wanted - {e.id for e in entries}
        if missing:
            raise UsageError(f"unknown camera ids: {sorted(missing)}")
    return scene, entries


def _run_renders(settings: dict, renderer, label: str) -> int:
    scene, entries = load_inputs(settings)
    config = render_config(settings)
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        for entry in entries:
            camera = scale_camera(entry.camera, settings["fov_scale"], settings["res_scale"])
            start = time.perf_counter()
            fb, stats = renderer(scene, camera, config)
            elapsed = time.perf_counter() - start
            base = out / entry.id
            write_image(fb, base)
            written += [base.with_suffix(".png"), base.with_suffix(".aaaf")]
            pairs = "-" if stats is None else f"{stats.tile_pairs}"
            print(f"{label} {entry.id}: {camera.width}x{camera.height} {elapsed * 1000:.1f} ms "
                  f"gaussians={len(scene)} tile_pairs={pairs}")
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return EXIT_OK


def cmd_render(settings: dict) -> int:
    return _run_renders(settings, raster.render_frame, "render")


def cmd_oracle(settings: dict) -> int:
    return _run_renders(settings, lambda s, c, cfg: (oracle.render_reference(s, c, cfg), None), "oracle")


def cmd_compare(dir_a, dir_b, tolerance: float) -> int:
    a_files = {p.name for p in Path(dir_a).glob("*.aaaf")}
    b_files = {p.name for p in Path(dir_b).glob("*.aaaf")}
    if not Path(dir_a).is_dir() or not Path(dir_b).is_dir():
        raise FileNotFoundError(f"not a directory: {dir_a if not Path(dir_a).is_dir() else dir_b}")
    if a_files != b_files or not a_files:
        print(f"file sets differ: only in a={sorted(a_files - b_files)} only in b={sorted(b_files - a_files)}")
        return EXIT_MISMATCH
    ok = True
    for name in sorted(a_files):
        a = load_float_image(Path(dir_a) / name)
        b = load_float_image(Path(dir_b) / name)
        if a.shape != b.shape:
            print(f"{name}: shape {a.shape} vs {b.shape} FAIL")
            ok = False
            continue
        diff = float(np.max(np.abs(a - b))) if a.size else 0.0
        value = psnr(a, b)
        status = "ok" if diff <= tolerance else "FAIL"
        ok &= diff <= tolerance
        psnr_text = "inf" if math.isinf(value) else f"{value:.3f}"
        print(f"{name}: max_abs_diff={diff:.3e} psnr={psnr_text} dB {status}")
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_stats(settings: dict) -> int:
    scene, entries = load_inputs({**settings, "out": settings.get("out") or "."})
    config = render_config(settings)
    for entry in entries:
        camera = scale_camera(entry.camera, settings["fov_scale"], settings["res_scale"])
        stats = raster.RenderStats()
        prepared = raster.preprocess(scene, camera, config, stats)
        raster.bin_to_tiles(prepared, camera, config, stats)
        print(f"stats {entry.id}: gaussians={stats.input_gaussians} after_view_cull={stats.after_view_cull} "
              f"prepared={stats.prepared} rect_pairs={stats.rect_pairs} tile_pairs={stats.tile_pairs} "
              f"reduction={stats.reduction:.4f}")
    return EXIT_OK


def cmd_synth(seed: int, n: int, output, n_cameras: int = 3, resolution: int = 64) -> int:
    if n < 0:
        raise UsageError("--n must be non-negative")
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    gaussians, cameras = synth_scene(seed, n, n_cameras, resolution)
    write_ply(out / "scene.ply", gaussians)
    write_cameras(out / "cameras.json", cameras)
    print(f"synth: wrote {n} gaussians and {len(cameras)} cameras to {out}")
    return EXIT_OK


def _add_render_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--scene", help="3DGS PLY file")
    p.add_argument("--cameras", help="camera JSON file")
    p.add_argument("--train-cameras", dest="train_cameras", help="training cameras for the filter's v_train")
    p.add_argument("--train-visibility", dest="train_visibility", choices=("visible", "all"),
                   help="restrict v_train to cameras that see the mean (default) or use all")
    p.add_argument("--out", help="output directory")
    p.add_argument("--camera-id", dest="camera_id", action="append", help="render only this camera id")
    p.add_argument("--k", type=float, help="filter kernel size (default 0.3)")
    p.add_argument("--tau-rho", dest="tau_rho", type=float, help="squared cutoff distance (default 9)")
    p.add_argument("--epsilon-angle", dest="epsilon_angle", type=float)
    p.add_argument("--tile-size", dest="tile_size", type=int, help="tile edge in pixels (default 16)")
    p.add_argument("--alpha-cutoff", dest="alpha_cutoff", type=float)
    p.add_argument("--alpha-clamp", dest="alpha_clamp", type=float)
    p.add_argument("--transmittance-epsilon", dest="transmittance_epsilon", type=float)
    p.add_argument("--background", help="r,g,b in [0, 1]")
    p.add_argument("--fov-scale", dest="fov_scale", type=float, help="divide the focal length")
    p.add_argument("--res-scale", dest="res_scale", type=float, help="multiply resolution and focal length")
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--near-as-plane", dest="near_as_plane", action="store_const", const=True,
                   help="cull tiles against the 5-plane frustum directly")
    p.add_argument("--no-tile-cull", dest="tile_culling", action="store_const", const=False,
                   help="bin by bounding rectangle only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsrast", description="CPU rasterizer for 3D Gaussian scenes")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("render", "render with the tiled rasterizer"),
                            ("oracle-render", "render with the brute-force reference"),
                            ("stats", "report culling statistics")):
        _add_render_flags(sub.add_parser(name, help=help_text))
    p = sub.add_parser("compare", help="compare two directories of float images")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p = sub.add_parser("synth", help="write a random scene and camera ring")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--n-cameras", dest="n_cameras", type=int, default=3)
    p.add_argument("--resolution", type=int, default=64)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.command == "compare":
            return cmd_compare(args.dir_a, args.dir_b, args.tolerance)
        if args.command == "synth":
            return cmd_synth(args.seed, args.n, args.out, args.n_cameras, args.resolution)
        settings = resolve(args)
        if args.command == "render":
            return cmd_render(settings)
        if args.command == "oracle-render":
            return cmd_oracle(settings)
        return cmd_stats(settings)
    except UsageError as exc:
        print(f"gsrast: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, SceneFormatError, ValidationError) as exc:
        print(f"gsrast: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
