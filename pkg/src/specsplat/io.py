"""File formats and persistence.

- PNG 8-bit images carrying sRGB; all in-memory math is linear float64.
- PFM float maps for environment and normal images (inspection-friendly).
- Binary little-endian PLY point clouds with double precision properties
  so checkpoints round-trip bit-exactly.
- A single camera-transforms JSON per dataset: one camera_angle_x plus a
  4x4 OpenGL-convention camera-to-world matrix per frame.
- Checkpoints are directories: cloud.ply + env.pfm + state.npz; the npz
  holds the authoritative float64 environment, optimizer moments, RNG
  state, and the config, so load(save(x)) is value-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import Camera, GaussianCloud
from .shading import EnvironmentMap

CHECKPOINT_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Color transfer
# ---------------------------------------------------------------------------

def srgb_encode(linear):
    linear = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    low = linear <= 0.0031308
    out = np.empty_like(linear)
    out[low] = 12.92 * linear[low]
    out[~low] = 1.055 * np.power(linear[~low], 1.0 / 2.4) - 0.055
    return out


def srgb_decode(encoded):
    encoded = np.asarray(encoded, dtype=np.float64)
    low = encoded <= 0.04045
    out = np.empty_like(encoded)
    out[low] = encoded[low] / 12.92
    out[~low] = np.power((encoded[~low] + 0.055) / 1.055, 2.4)
    return out


def write_png(path, linear_rgb):
    """Linear float image -> 8-bit sRGB PNG."""
    codes = np.rint(255.0 * srgb_encode(linear_rgb)).astype(np.uint8)
    Image.fromarray(codes, mode="RGB").save(path)


def read_png(path):
    """8-bit sRGB PNG -> linear float64 image."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return srgb_decode(arr / 255.0)


def write_mask_png(path, mask):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


# ---------------------------------------------------------------------------
# PFM float maps
# ---------------------------------------------------------------------------

def write_pfm(path, data):
    """Write a (H, W) or (H, W, 3) float map, little-endian, bottom-up rows."""
    data = np.asarray(data, dtype=np.float32)
    color = data.ndim == 3
    if color and data.shape[2] != 3:
        raise ValueError("PFM color images must have 3 channels")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(b"PF\n" if color else b"Pf\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file (magic {magic!r})")
        color = magic == b"PF"
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimensions line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h * (3 if color else 1)
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype).reshape(
        (h, w, 3) if color else (h, w))
    return np.flipud(data).astype(np.float64)


# ---------------------------------------------------------------------------
# PLY point clouds
# ---------------------------------------------------------------------------

_PLY_FIELDS = (
    ["x", "y", "z"]
    + [f"rot_{i}" for i in range(4)]
    + [f"scale_{i}" for i in range(3)]
    + ["opacity_raw"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["reflection_strength"]
)


def write_ply_cloud(path, cloud):
    n = len(cloud)
    cols = np.concatenate(
        [
            cloud.positions,
            cloud.rotations,
            cloud.log_scales,
            cloud.opacity_raw[:, None],
            cloud.sh_coeffs[:, :, 0],
            cloud.sh_coeffs[:, :, 1:].reshape(n, 45),
            cloud.reflection[:, None],
        ],
        axis=1,
    )
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property double {name}" for name in _PLY_FIELDS]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(cols, dtype="<f8").tobytes())


def read_ply_cloud(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = f.readline().strip()
        if fmt != b"format binary_little_endian 1.0":
            raise ValueError(f"{path}: unsupported PLY format line {fmt!r}")
        n = None
        names = []
        sizes = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: unexpected end of PLY header")
            line = line.strip()
            if line == b"end_header":
                break
            parts = line.split()
            if parts[0] == b"element":
                if parts[1] != b"vertex":
                    raise ValueError(f"{path}: unsupported element {parts[1]!r}")
                n = int(parts[2])
            elif parts[0] == b"property":
                kind, name = parts[1], parts[2].decode()
                if kind not in (b"double", b"float"):
                    raise ValueError(f"{path}: unsupported property type {kind!r}")
                names.append(name)
                sizes.append(8 if kind == b"double" else 4)
        if n is None:
            raise ValueError(f"{path}: PLY header missing vertex element")
        if names != _PLY_FIELDS:
            raise ValueError(f"{path}: unexpected PLY property layout")
        rowbytes = sum(sizes)
        raw = f.read(n * rowbytes)
        if len(raw) != n * rowbytes:
            raise ValueError(f"{path}: truncated PLY payload "
                             f"({len(raw)} of {n * rowbytes} bytes)")
    cols = np.frombuffer(raw, dtype="<f8").reshape(n, len(names))
    sh = np.zeros((n, 3, 16))
    sh[:, :, 0] = cols[:, 11:14]
    sh[:, :, 1:] = cols[:, 14:59].reshape(n, 3, 15)
    return GaussianCloud(
        positions=cols[:, 0:3].copy(),
        rotations=cols[:, 3:7].copy(),
        log_scales=cols[:, 7:10].copy(),
        opacity_raw=cols[:, 10].copy(),
        sh_coeffs=sh,
        reflection=cols[:, 59].copy(),
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    cloud: GaussianCloud
    env: EnvironmentMap
    state_arrays: dict        # iteration, counters, optimizer moments, ...
    config_dict: dict
    config_hash: str
    data_dir: str | None = None


def save_checkpoint(path, cloud, env, state_arrays, config_dict, config_hash,
                    data_dir=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_ply_cloud(path / "cloud.ply", cloud)
    write_pfm(path / "env.pfm", env.data)  # float32 preview; npz is exact
    extras = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION, dtype=np.int64),
        "env_data": env.data,
        "config_json": np.bytes_(json.dumps(config_dict, sort_keys=True, default=str)),
        "config_hash": np.bytes_(config_hash),
        "data_dir": np.bytes_("" if data_dir is None else str(data_dir)),
    }
    if cloud.domain_center is not None:
        extras["domain_center"] = cloud.domain_center
        extras["domain_radius"] = np.array(cloud.domain_radius)
    np.savez(path / "state.npz", **state_arrays, **extras)
    return path


def load_checkpoint(path):
    path = Path(path)
    ply = path / "cloud.ply"
    npz = path / "state.npz"
    if not ply.exists() or not npz.exists():
        raise FileNotFoundError(f"{path}: missing cloud.ply or state.npz")
    cloud = read_ply_cloud(ply)
    with np.load(npz) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"{path}: checkpoint format version {version}, "
                f"this build reads {CHECKPOINT_FORMAT_VERSION}")
        arrays = {k: z[k] for k in z.files}
    env = EnvironmentMap(arrays.pop("env_data"))
    config_dict = json.loads(bytes(arrays.pop("config_json")).decode())
    config_hash = bytes(arrays.pop("config_hash")).decode()
    data_dir = bytes(arrays.pop("data_dir")).decode() or None
    arrays.pop("format_version")
    if "domain_center" in arrays:
        cloud.domain_center = np.array(arrays.pop("domain_center"))
        cloud.domain_radius = float(arrays.pop("domain_radius"))
    return Checkpoint(cloud=cloud, env=env, state_arrays=arrays,
                      config_dict=config_dict, config_hash=config_hash,
                      data_dir=data_dir)


# ---------------------------------------------------------------------------
# Datasets (camera-transforms JSON + images)
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    entries: list   # (Camera, image, gt_normals | None, mask | None)
    splits: list    # "train" / "test" per entry
    camera_angle_x: float

    def subset(self, split):
        keep = [i for i, s in enumerate(self.splits) if s == split]
        return Dataset(entries=[self.entries[i] for i in keep],
                       splits=[split] * len(keep),
                       camera_angle_x=self.camera_angle_x)

    def __len__(self):
        return len(self.entries)


def camera_to_gl(cam):
    """Camera -> 4x4 OpenGL camera-to-world (x right, y up, z backward)."""
    out = np.eye(4)
    r = cam.rotation
    out[:3, 0] = r[0]
    out[:3, 1] = -r[1]
    out[:3, 2] = -r[2]
    out[:3, 3] = cam.position
    return out


def camera_from_gl(matrix, width, height, camera_angle_x, fl_x=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    rot = np.stack([matrix[:3, 0], -matrix[:3, 1], -matrix[:3, 2]])
    fx = float(fl_x) if fl_x else (width / 2.0) / np.tan(camera_angle_x / 2.0)
    return Camera(width=width, height=height, fx=fx, fy=fx,
                  cx=width / 2.0, cy=height / 2.0,
                  rotation=rot, position=matrix[:3, 3])


def save_dataset(path, frames, camera_angle_x, fl_x=None):
    """frames: list of dicts with keys camera, image, split and optionally
    normals, mask. Writes PNG/PFM files plus one transforms.json. fl_x,
    when given, records the exact shared focal length (the angle alone
    round-trips only to trig precision)."""
    path = Path(path)
    records = []
    for i, fr in enumerate(frames):
        split = fr["split"]
        (path / split).mkdir(parents=True, exist_ok=True)
        rel = f"{split}/r_{i:03d}.png"
        write_png(path / rel, fr["image"])
        rec = {
            "file_path": rel,
            "split": split,
            "transform_matrix": camera_to_gl(fr["camera"]).tolist(),
        }
        if fr.get("normals") is not None:
            rec["normal_path"] = f"{split}/n_{i:03d}.pfm"
            write_pfm(path / rec["normal_path"], fr["normals"])
        if fr.get("mask") is not None:
            rec["mask_path"] = f"{split}/m_{i:03d}.png"
            write_mask_png(path / rec["mask_path"], fr["mask"])
        records.append(rec)
    blob = {"camera_angle_x": float(camera_angle_x), "frames": records}
    if fl_x is not None:
        blob["fl_x"] = float(fl_x)
    with open(path / "transforms.json", "w") as f:
        json.dump(blob, f, indent=1, sort_keys=True)
    return path


def load_dataset(path):
    path = Path(path)
    tf = path / "transforms.json"
    if not tf.exists():
        raise FileNotFoundError(f"{tf}: camera-transforms file not found")
    try:
        with open(tf) as f:
            blob = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"{tf}: malformed JSON ({e})") from e
    if "camera_angle_x" not in blob:
        raise ValueError(f"{tf}: missing field 'camera_angle_x'")
    if "frames" not in blob:
        raise ValueError(f"{tf}: missing field 'frames'")
    angle = float(blob["camera_angle_x"])
    fl_x = blob.get("fl_x")

    entries = []
    splits = []
    shape = None
    for i, rec in enumerate(blob["frames"]):
        for key in ("file_path", "transform_matrix"):
            if key not in rec:
                raise ValueError(f"{tf}: frame {i} missing field '{key}'")
        img_path = path / rec["file_path"]
        if not img_path.exists():
            raise FileNotFoundError(f"{img_path}: image referenced by frame {i}")
        image = read_png(img_path)
        if shape is None:
            shape = image.shape
        elif image.shape != shape:
            raise ValueError(f"{img_path}: image size {image.shape[:2]} differs "
                             f"from first frame {shape[:2]}")
        matrix = np.asarray(rec["transform_matrix"], dtype=np.float64)
        if matrix.shape != (4, 4) or not np.all(np.isfinite(matrix)):
            raise ValueError(f"{tf}: frame {i} transform_matrix is not a finite 4x4")
        cam = camera_from_gl(matrix, image.shape[1], image.shape[0], angle, fl_x=fl_x)
        normals = read_pfm(path / rec["normal_path"]) if rec.get("normal_path") else None
        mask = read_mask_png(path / rec["mask_path"]) if rec.get("mask_path") else None
        entries.append((cam, image, normals, mask))
        splits.append(rec.get("split", "train"))
    return Dataset(entries=entries, splits=splits, camera_angle_x=angle)


# ---------------------------------------------------------------------------
# Config files: flat key = value text
# ---------------------------------------------------------------------------

def _parse_value(raw):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "on", "yes"):
        return True
    if low in ("false", "off", "no"):
        return False
    if low in ("none", "null"):
        return None
    if "," in raw:
        return tuple(float(p) for p in raw.split(","))
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_config_text(text):
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = _parse_value(value)
    return out


def config_to_text(cfg_dict):
    lines = []
    for key, val in cfg_dict.items():
        if val is None:
            lines.append(f"{key} = none")
        elif isinstance(val, bool):
            lines.append(f"{key} = {'true' if val else 'false'}")
        elif isinstance(val, (tuple, list)):
            lines.append(f"{key} = {','.join(repr(float(v)) for v in val)}")
        else:
            lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
    return "\n".join(lines) + "\n"
