"""Dataset directories, PNG images and PLY point clouds.

Dataset layout::

    cameras.json      [{"K": [fx, fy, cx, cy], "W": 4x4 row-major, "width", "height",
                        "time": int, "split": "train" | "test"}, ...]
    images/00000.png  one 8-bit RGB image per camera entry, in entry order
    masks/00000.png   optional 8-bit masks, >= 128 marks dynamic foreground
    points.ply        optional initial points (x, y, z[, red, green, blue])
    meta.json         optional {"background": [r, g, b], "scene_extent": float}
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .raster import Camera


class DatasetError(ValueError):
    pass


def read_png(path, channels: int = 3) -> np.ndarray:
    """8-bit PNG to float ``(H, W, channels)`` in [0, 1]."""
    with PILImage.open(path) as im:
        im = im.convert("RGB" if channels == 3 else "L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr if channels == 3 else arr[..., None]


def write_png(path, image) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(q, mode="RGB" if q.ndim == 3 else "L").save(path)


_PLY_TYPES = {"char": "i1", "uchar": "u1", "short": "i2", "ushort": "u2", "int": "i4",
              "uint": "u4", "float": "f4", "double": "f8", "int8": "i1", "uint8": "u1",
              "int16": "i2", "uint16": "u2", "int32": "i4", "uint32": "u4",
              "float32": "f4", "float64": "f8"}


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Vertex positions and optional RGB in [0, 1] from an ASCII or binary-LE PLY."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise DatasetError(f"{path}: not a PLY file")
        fmt, count, props, in_vertex = None, 0, [], False
        while True:
            line = fh.readline()
            if not line:
                raise DatasetError(f"{path}: truncated header")
            tok = line.decode("ascii").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    count = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                if tok[1] == "list":
                    raise DatasetError(f"{path}: list properties on vertices are not supported")
                props.append((tok[2], _PLY_TYPES[tok[1]]))
            elif tok[0] == "end_header":
                break
        if fmt == "ascii":
            rows = [fh.readline().split() for _ in range(count)]
            data = {name: np.array([float(r[i]) for r in rows]) for i, (name, _) in enumerate(props)}
        elif fmt == "binary_little_endian":
            dt = np.dtype([(name, "<" + t) for name, t in props])
            rec = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt, count=count)
            data = {name: rec[name].astype(np.float64) for name, _ in props}
        else:
            raise DatasetError(f"{path}: unsupported PLY format {fmt!r}")
    try:
        xyz = np.stack([data["x"], data["y"], data["z"]], axis=1)
    except KeyError as e:
        raise DatasetError(f"{path}: missing vertex property {e}") from None
    rgb = None
    if all(c in data for c in ("red", "green", "blue")):
        rgb = np.stack([data["red"], data["green"], data["blue"]], axis=1)
        if dict(props)["red"] in ("u1", "i1"):
            rgb = rgb / 255.0
    return xyz, rgb


def write_ply(path, xyz, rgb=None, binary: bool = True) -> None:
    xyz = np.asarray(xyz, dtype=np.float64)
    n = len(xyz)
    props = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if rgb is not None:
        props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    names = {"f8": "double", "u1": "uchar"}
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}"]
    header += [f"property {names[t]} {name}" for name, t in props]
    header.append("end_header")
    rec = np.empty(n, dtype=[(name, "<" + t) for name, t in props])
    rec["x"], rec["y"], rec["z"] = xyz.T
    if rgb is not None:
        q = np.clip(np.rint(np.asarray(rgb) * 255), 0, 255).astype(np.uint8)
        rec["red"], rec["green"], rec["blue"] = q.T
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
        else:
            for r in rec:
                fh.write((" ".join(repr(v.item()) for v in r) + "\n").encode("ascii"))


@dataclass
class Frame:
    image_path: Path
    camera: Camera
    time: int
    split: str = "train"
    mask_path: Path | None = None

    def image(self) -> np.ndarray:
        return read_png(self.image_path, 3)

    def mask(self) -> np.ndarray | None:
        if self.mask_path is None:
            return None
        return (read_png(self.mask_path, 1) >= 128 / 255.0).astype(np.float64)


@dataclass
class Dataset:
    frames: list[Frame]
    init_points: np.ndarray | None = None
    init_colors: np.ndarray | None = None
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scene_extent: float | None = None
    root: Path | None = None

    @property
    def mode(self) -> str:
        train = self.split("train")
        return "masked" if train and all(f.mask_path is not None for f in train) else "maskless"

    @property
    def n_frames(self) -> int:
        return max(f.time for f in self.frames) + 1

    def split(self, name: str) -> list[Frame]:
        return [f for f in self.frames if f.split == name]

    def validate(self) -> None:
        if not self.frames:
            raise DatasetError("dataset has no frames")
        times = sorted({f.time for f in self.frames})
        if times != list(range(len(times))):
            raise DatasetError(f"timestamps are not contiguous from 0: {times}")
        for f in self.frames:
            if f.split not in ("train", "test"):
                raise DatasetError(f"frame at t={f.time}: unknown split {f.split!r}")


def load_dataset(root) -> Dataset:
    root = Path(root)
    cam_file = root / "cameras.json"
    if not cam_file.exists():
        raise DatasetError(f"{root}: missing cameras.json")
    entries = json.loads(cam_file.read_text())
    images = sorted((root / "images").glob("*.png")) if (root / "images").is_dir() else []
    if len(images) != len(entries):
        raise DatasetError(f"{root}: {len(entries)} cameras but {len(images)} images")
    mask_dir = root / "masks"
    frames = []
    for i, e in enumerate(entries):
        try:
            cam = Camera.from_dict(e)
        except (KeyError, ValueError) as err:
            raise DatasetError(f"camera entry {i}: {err}") from None
        img = root / "images" / f"{i:05d}.png"
        if not img.exists():
            raise DatasetError(f"frame {i}: missing image {img.name}")
        mpath = mask_dir / f"{i:05d}.png"
        frames.append(Frame(img, cam, int(e["time"]), e.get("split", "train"),
                            mpath if mpath.exists() else None))
    if mask_dir.is_dir():
        missing = [i for i, f in enumerate(frames) if f.split == "train" and f.mask_path is None]
        if missing:
            raise DatasetError(f"masked dataset is missing the mask of frame {missing[0]} "
                               f"(masks/{missing[0]:05d}.png)")
    meta = json.loads((root / "meta.json").read_text()) if (root / "meta.json").exists() else {}
    pts = cols = None
    if (root / "points.ply").exists():
        pts, cols = read_ply(root / "points.ply")
    ds = Dataset(frames, pts, cols, np.asarray(meta.get("background", [0, 0, 0]), dtype=np.float64),
                 meta.get("scene_extent"), root)
    ds.validate()
    return ds


def write_dataset(root, cameras, times, splits, images, masks=None, points=None, colors=None,
                  background=(0, 0, 0), scene_extent=None) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (cam, t, s) in enumerate(zip(cameras, times, splits)):
        entries.append({**cam.to_dict(), "time": int(t), "split": s})
        write_png(root / "images" / f"{i:05d}.png", images[i])
    if masks is not None:
        (root / "masks").mkdir(exist_ok=True)
        for i, m in enumerate(masks):
            write_png(root / "masks" / f"{i:05d}.png", m)
    write_json(root / "cameras.json", entries)
    meta = {"background": list(map(float, background))}
    if scene_extent is not None:
        meta["scene_extent"] = float(scene_extent)
    write_json(root / "meta.json", meta)
    if points is not None:
        write_ply(root / "points.ply", points, colors)


def write_json(path, obj) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1)
    os.replace(tmp, path)


def write_trajectory_csv(path, rows) -> None:
    """Rows of ``(gaussian_id, t, x, y, z, p)``; floats keep 17 significant digits."""
    with open(path, "w") as fh:
        fh.write("gaussian_id,t,x,y,z,p\n")
        for gid, t, x, y, z, p in rows:
            fh.write(f"{int(gid)},{float(t)!r},{x:.17g},{y:.17g},{z:.17g},{p:.17g}\n")


def read_trajectory_csv(path) -> np.ndarray:
    """Structured array with fields gaussian_id, t, x, y, z, p."""
    return np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="ascii")
