"""Scene, camera and image files.

* Gaussian scenes: binary little-endian PLY with the usual 3DGS vertex layout.
* Cameras: JSON array in the 3DGS ``cameras.json`` style, or entries with an
  explicit ``world_to_view`` matrix.
* Images: 8-bit PNG, plus a raw float format (``AAAF`` magic, u32 width and
  height, row-major float32 RGB) for exact comparisons.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from gsrast.core import Camera, Gaussian, ValidationError

FLOAT_MAGIC = b"AAAF"

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_REST_TO_DEGREE = {0: 0, 9: 1, 24: 2, 45: 3}


class SceneFormatError(ValueError):
    """Malformed scene or camera file."""


@dataclass
class SceneFile:
    gaussians: list[Gaussian]
    path: Path | None = None

    @property
    def count(self) -> int:
        return len(self.gaussians)

    @property
    def sh_degree(self) -> int:
        return max((g.sh_degree for g in self.gaussians), default=0)


@dataclass(frozen=True)
class CameraEntry:
    camera: Camera
    id: str
    image_name: str | None = None
    role: str = "test"


@dataclass
class CameraSet:
    entries: list[CameraEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise SceneFormatError(f"duplicate camera ids in {ids}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def with_role(self, role: str) -> list[CameraEntry]:
        return [e for e in self.entries if e.role == role]

    @property
    def cameras(self) -> list[Camera]:
        return [e.camera for e in self.entries]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _parse_header(data: bytes, path) -> tuple[int, list[tuple[str, str]], int]:
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise SceneFormatError(f"{path}: offset 0: not a PLY file (missing 'ply' or 'end_header')")
    body_offset = end + len(b"end_header\n")
    count = None
    props: list[tuple[str, str]] = []
    element = None
    offset = 0
    for line in data[:end].decode("ascii", errors="replace").split("\n"):
        where = f"{path}: offset {offset}"
        offset += len(line) + 1
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "binary_little_endian":
                raise SceneFormatError(f"{where}: unsupported format {' '.join(parts[1:])!r}")
        elif parts[0] == "element":
            if len(parts) != 3:
                raise SceneFormatError(f"{where}: malformed element line {line!r}")
            element = parts[1]
            if element == "vertex":
                if count is not None:
                    raise SceneFormatError(f"{where}: duplicate vertex element")
                try:
                    count = int(parts[2])
                except ValueError:
                    raise SceneFormatError(f"{where}: bad vertex count {parts[2]!r}") from None
                if count < 0:
                    raise SceneFormatError(f"{where}: negative vertex count")
            elif count is None:
                raise SceneFormatError(f"{where}: element {element!r} before vertex is unsupported")
        elif parts[0] == "property":
            if element != "vertex":
                continue
            if len(parts) != 3 or parts[1] == "list":
                raise SceneFormatError(f"{where}: unsupported property line {line!r}")
            if parts[1] not in _PLY_TYPES:
                raise SceneFormatError(f"{where}: field {parts[2]!r} has unknown type {parts[1]!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise SceneFormatError(f"{where}: unexpected header keyword {parts[0]!r}")
    if count is None:
        raise SceneFormatError(f"{path}: offset {end}: no vertex element")
    return count, props, body_offset


def load_ply(path) -> SceneFile:
    """Read a 3DGS PLY and apply activations (exp scale, sigmoid opacity, normalized rotation)."""
    path = Path(path)
    data = path.read_bytes()
    count, props, body = _parse_header(data, path)
    names = [name for name, _ in props]
    required = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    for name in required:
        if name not in names:
            raise SceneFormatError(f"{path}: header: missing field {name!r}")
    if len(set(names)) != len(names):
        raise SceneFormatError(f"{path}: header: duplicate field names")
    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    if n_rest not in _REST_TO_DEGREE:
        raise SceneFormatError(f"{path}: header: {n_rest} f_rest fields, expected 0, 9, 24 or 45")
    for j in range(n_rest):
        if f"f_rest_{j}" not in names:
            raise SceneFormatError(f"{path}: header: missing field 'f_rest_{j}'")
    dtype = np.dtype([(name, "<" + t) for name, t in props])
    expected = body + count * dtype.itemsize
    if len(data) < expected:
        short_row = (len(data) - body) // dtype.itemsize
        raise SceneFormatError(
            f"{path}: offset {body + short_row * dtype.itemsize}: truncated at vertex {short_row}, "
            f"need {expected} bytes, have {len(data)}"
        )
    rows = np.frombuffer(data, dtype=dtype, count=count, offset=body)
    k = n_rest // 3
    gaussians = []
    for i, row in enumerate(rows):
        sh = np.zeros((k + 1, 3))
        sh[0] = [row["f_dc_0"], row["f_dc_1"], row["f_dc_2"]]
        for c in range(3):
            for j in range(k):
                sh[1 + j, c] = row[f"f_rest_{c * k + j}"]
        try:
            gaussians.append(
                Gaussian(
                    mean=[row["x"], row["y"], row["z"]],
                    scale=np.exp(np.array([row["scale_0"], row["scale_1"], row["scale_2"]], dtype=np.float64)),
                    rotation=[row["rot_0"], row["rot_1"], row["rot_2"], row["rot_3"]],
                    opacity=float(_sigmoid(np.float64(row["opacity"]))),
                    sh=sh,
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"{path}: gaussian {i}: {exc}") from None
    return SceneFile(gaussians, path)


def ply_bytes(gaussians) -> bytes:
    """Serialize Gaussians in the 3DGS layout, undoing the activations."""
    degree = max((g.sh_degree for g in gaussians), default=0)
    k = (degree + 1) ** 2 - 1
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{j}" for j in range(3 * k)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(gaussians)}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    table = np.zeros((len(gaussians), len(names)), dtype="<f4")
    for i, g in enumerate(gaussians):
        sh = np.zeros((k + 1, 3))
        sh[: g.sh.shape[0]] = g.sh
        rest = sh[1:].T.reshape(-1)
        logit = math.log(g.opacity / (1.0 - g.opacity))
        table[i] = np.concatenate(
            [g.mean, np.zeros(3), sh[0], rest, [logit], np.log(g.scale), g.rotation]
        )
    return ("\n".join(header) + "\n").encode("ascii") + table.tobytes()


def write_ply(path, gaussians) -> None:
    Path(path).write_bytes(ply_bytes(gaussians))


def _camera_from_entry(entry: dict, index: int, path) -> CameraEntry:
    where = f"{path}: camera {index}"
    if not isinstance(entry, dict):
        raise SceneFormatError(f"{where}: expected an object")
    try:
        width = int(entry["width"])
        height = int(entry["height"])
        fx = float(entry["fx"])
        fy = float(entry["fy"])
        cx = float(entry.get("cx", width / 2.0))
        cy = float(entry.get("cy", height / 2.0))
        near = float(entry.get("near", 0.01))
        if "world_to_view" in entry:
            w2v = np.array(entry["world_to_view"], dtype=np.float64)
        else:
            # 3DGS stores the camera-to-world rotation and the camera center
            rot = np.array(entry["rotation"], dtype=np.float64)
            pos = np.array(entry["position"], dtype=np.float64)
            if rot.shape != (3, 3) or pos.shape != (3,):
                raise SceneFormatError(f"{where}: rotation must be 3x3 and position a 3-vector")
            w2v = np.eye(4)
            w2v[:3, :3] = rot.T
            w2v[:3, 3] = -rot.T @ pos
        camera = Camera(width, height, fx, fy, cx, cy, w2v, near)
    except KeyError as exc:
        raise SceneFormatError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"{where}: {exc}") from None
    role = entry.get("role", "test")
    if role not in ("train", "test"):
        raise SceneFormatError(f"{where}: role must be 'train' or 'test', got {role!r}")
    return CameraEntry(camera, str(entry.get("id", index)), entry.get("img_name"), role)


def load_cameras(path) -> CameraSet:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(raw, dict) and "cameras" in raw:
        raw = raw["cameras"]
    if not isinstance(raw, list):
        raise SceneFormatError(f"{path}: expected a JSON array of cameras")
    return CameraSet([_camera_from_entry(e, i, path) for i, e in enumerate(raw)])


def camera_to_entry(entry: CameraEntry) -> dict:
    cam = entry.camera
    c2w = cam.view_to_world
    out = {
        "id": entry.id,
        "img_name": entry.image_name or entry.id,
        "width": cam.width,
        "height": cam.height,
        "position": c2w[:3, 3].tolist(),
        "rotation": c2w[:3, :3].tolist(),
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "near": cam.near,
        "role": entry.role,
    }
    return out


def write_cameras(path, cameras: CameraSet) -> None:
    Path(path).write_text(json.dumps([camera_to_entry(e) for e in cameras], indent=2) + "\n")


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.clip(rgb, 0.0, 1.0)).astype(np.uint8)


def write_png(path, rgb: np.ndarray) -> None:
    Image.fromarray(to_uint8(np.asarray(rgb)), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_float_image(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    height, width = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(FLOAT_MAGIC + struct.pack("<II", width, height))
        f.write(np.ascontiguousarray(rgb, dtype="<f4").tobytes())


def load_float_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != FLOAT_MAGIC:
        raise SceneFormatError(f"{path}: offset 0: missing AAAF magic")
    width, height = struct.unpack("<II", data[4:12])
    need = 12 + width * height * 12
    if len(data) != need:
        raise SceneFormatError(f"{path}: offset 12: expected {need - 12} pixel bytes, found {len(data) - 12}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width, 3).astype(np.float64)


def write_image(framebuffer, path) -> None:
    """Write ``<path>.png`` and ``<path>.aaaf`` for a framebuffer."""
    path = Path(path)
    write_png(path.with_suffix(".png"), framebuffer.rgb)
    write_float_image(path.with_suffix(".aaaf"), framebuffer.rgb)


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".png":
        return load_png(path)
    return load_float_image(path)


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; ``inf`` for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
