"""On-disk formats and dataset layout.

All binary formats are little-endian:

* point clouds (``.pts``): magic ``PNDA``, u32 version, u32 N, u32 F,
  N*3 f32 positions, N*F f32 features
* labels (``.lbl``): u32 N, N u32 panoptic ids
* images (``.ppm``): binary PPM (P6), 8-bit, values scaled by 255
* calibration (``.calib``): flat key=value text with keys fx, fy, cx, cy
  and ext00..ext33 (extrinsic, row-major)
* 2D mask proposals (``.vfm``): u32 count, u32 H, u32 W, then per proposal
  u32 label, f32 confidence, u32 n_runs and n_runs (u32 start, u32 length)
  pairs run-length-encoding the flattened row-major mask
* pseudo-label weights (``.wgt``): raw N u8 bytes
* checkpoints (``.ckpt``): magic ``PNDC``, u32 param count, f32 student
  parameters, f32 teacher parameters, u64 iteration
* error maps: ASCII PLY with per-vertex uchar colors

Datasets live under ``<root>/<split>/<frame_id>.{pts,lbl,ppm,calib}`` with a
``manifest.txt`` per split listing frame ids and a ``classes.txt`` at the
root describing the class registry.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import (
    Calibration,
    CameraImage,
    ClassRegistry,
    Frame,
    PanopticLabeling,
    PointCloud,
)

POINTS_MAGIC = b"PNDA"
CHECKPOINT_MAGIC = b"PNDC"
POINTS_VERSION = 1

FRAME_SUFFIXES = (".pts", ".lbl", ".ppm", ".calib")


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"truncated file while reading {what}")
    return data


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------

def write_point_cloud(path, cloud):
    pos = cloud.positions.astype("<f4")
    feat = cloud.features.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(POINTS_MAGIC)
        fh.write(struct.pack("<III", POINTS_VERSION, cloud.n, feat.shape[1]))
        fh.write(pos.tobytes())
        fh.write(feat.tobytes())


def read_point_cloud(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != POINTS_MAGIC:
            raise ValueError(f"bad point cloud magic {magic!r} in {path}")
        version, n, f = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if version != POINTS_VERSION:
            raise ValueError(f"unsupported point cloud version {version}")
        pos = np.frombuffer(_read_exact(fh, n * 3 * 4, "positions"), dtype="<f4")
        feat = np.frombuffer(_read_exact(fh, n * f * 4, "features"), dtype="<f4")
    return PointCloud(
        positions=pos.reshape(n, 3).astype(np.float64),
        features=feat.reshape(n, f).astype(np.float64),
    )


# ---------------------------------------------------------------------------
# labels and weights
# ---------------------------------------------------------------------------

def write_labels(path, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if np.any(ids < 0) or np.any(ids > 0xFFFFFFFF):
        raise ValueError("panoptic ids out of u32 range")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", ids.shape[0]))
        fh.write(ids.astype("<u4").tobytes())


def read_labels(path):
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<I", _read_exact(fh, 4, "label count"))
        ids = np.frombuffer(_read_exact(fh, n * 4, "labels"), dtype="<u4")
    return ids.astype(np.int64)


def write_weights(path, weights):
    weights = np.asarray(weights)
    if weights.dtype != np.uint8:
        if np.any(weights < 0) or np.any(weights > 255):
            raise ValueError("weights out of u8 range")
        weights = weights.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(weights.tobytes())


def read_weights(path, n):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) != n:
        raise ValueError(f"weight file holds {len(data)} bytes, expected {n}")
    return np.frombuffer(data, dtype=np.uint8).copy()


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def write_ppm(path, image):
    rgb = image.rgb if isinstance(image, CameraImage) else np.asarray(image)
    data = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ValueError(f"not a binary PPM file: {path}")
    # header: P6, width height, maxval, each terminated by one whitespace byte
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError("only 8-bit PPM images are supported")
    raw = data[pos : pos + w * h * 3]
    if len(raw) != w * h * 3:
        raise ValueError(f"truncated PPM payload in {path}")
    rgb = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return CameraImage(rgb=rgb.astype(np.float64) / 255.0)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def write_calibration(path, calib):
    lines = [
        f"fx={calib.fx!r}",
        f"fy={calib.fy!r}",
        f"cx={calib.cx!r}",
        f"cy={calib.cy!r}",
    ]
    E = calib.extrinsic
    for i in range(4):
        for j in range(4):
            lines.append(f"ext{i}{j}={float(E[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_calibration(path):
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"bad calibration line: {line!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = float(val.strip())
    try:
        E = np.array(
            [[values[f"ext{i}{j}"] for j in range(4)] for i in range(4)]
        )
        return Calibration.from_values(
            values["fx"], values["fy"], values["cx"], values["cy"], E
        )
    except KeyError as exc:
        raise ValueError(f"calibration file {path} is missing key {exc}") from exc


# ---------------------------------------------------------------------------
# 2D mask proposals
# ---------------------------------------------------------------------------

def _rle_encode(mask):
    flat = np.asarray(mask, dtype=bool).ravel()
    if not flat.any():
        return np.zeros((0, 2), dtype=np.int64)
    padded = np.concatenate(([False], flat, [False]))
    edges = np.nonzero(np.diff(padded.astype(np.int8)))[0]
    starts = edges[0::2]
    ends = edges[1::2]
    return np.stack([starts, ends - starts], axis=1)


def _rle_decode(runs, h, w):
    flat = np.zeros(h * w, dtype=bool)
    for start, length in runs:
        if start < 0 or start + length > flat.size:
            raise ValueError("RLE run exceeds mask bounds")
        flat[start : start + length] = True
    return flat.reshape(h, w)


def write_proposals(path, proposals, image_shape):
    """Write a list of (mask, label, confidence) 2D proposals."""
    h, w = int(image_shape[0]), int(image_shape[1])
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", len(proposals), h, w))
        for mask, label, conf in proposals:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (h, w):
                raise ValueError(f"proposal mask shape {mask.shape} != {(h, w)}")
            runs = _rle_encode(mask)
            fh.write(struct.pack("<IfI", int(label), float(conf), runs.shape[0]))
            fh.write(runs.astype("<u4").tobytes())


def read_proposals(path):
    with open(path, "rb") as fh:
        count, h, w = struct.unpack("<III", _read_exact(fh, 12, "proposal header"))
        out = []
        for _ in range(count):
            label, conf, n_runs = struct.unpack(
                "<IfI", _read_exact(fh, 12, "proposal entry")
            )
            runs = np.frombuffer(
                _read_exact(fh, n_runs * 8, "proposal runs"), dtype="<u4"
            ).reshape(n_runs, 2)
            out.append((_rle_decode(runs.astype(np.int64), h, w), int(label), float(conf)))
    return out, (h, w)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(path, student, teacher, iteration):
    student = np.asarray(student, dtype=np.float64)
    teacher = np.asarray(teacher, dtype=np.float64)
    if student.shape != teacher.shape or student.ndim != 1:
        raise ValueError("student/teacher parameter vectors must be equal-length 1-D")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", student.shape[0]))
        fh.write(student.astype("<f4").tobytes())
        fh.write(teacher.astype("<f4").tobytes())
        fh.write(struct.pack("<Q", int(iteration)))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r} in {path}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        student = np.frombuffer(_read_exact(fh, count * 4, "student"), dtype="<f4")
        teacher = np.frombuffer(_read_exact(fh, count * 4, "teacher"), dtype="<f4")
        (iteration,) = struct.unpack("<Q", _read_exact(fh, 8, "iteration"))
    return student.astype(np.float64), teacher.astype(np.float64), int(iteration)


# ---------------------------------------------------------------------------
# PLY export
# ---------------------------------------------------------------------------

def write_ply_xyzrgb(path, positions, colors):
    positions = np.asarray(positions, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.uint8)
    if positions.shape[0] != colors.shape[0] or colors.shape[1] != 3:
        raise ValueError("positions and colors must be (N,3) and aligned")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {positions.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    body = [
        f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}"
        for p, c in zip(positions, colors)
    ]
    Path(path).write_text("\n".join(lines + body) + "\n")


# ---------------------------------------------------------------------------
# dataset layout
# ---------------------------------------------------------------------------

def frame_paths(split_dir, frame_id):
    split_dir = Path(split_dir)
    return {suffix: split_dir / f"{frame_id}{suffix}" for suffix in FRAME_SUFFIXES}


def save_frame(split_dir, frame):
    split_dir = Path(split_dir)
    split_dir.mkdir(parents=True, exist_ok=True)
    if not frame.frame_id:
        raise ValueError("frame_id must be set to save a frame")
    if frame.labels is None:
        raise ValueError("frames are saved with labels")
    paths = frame_paths(split_dir, frame.frame_id)
    write_point_cloud(paths[".pts"], frame.points)
    write_labels(paths[".lbl"], frame.labels.ids)
    write_ppm(paths[".ppm"], frame.image)
    write_calibration(paths[".calib"], frame.calibration)


def load_frame(split_dir, frame_id, registry):
    paths = frame_paths(split_dir, frame_id)
    for p in paths.values():
        if not p.exists():
            raise FileNotFoundError(f"missing frame file {p}")
    cloud = read_point_cloud(paths[".pts"])
    ids = read_labels(paths[".lbl"])
    image = read_ppm(paths[".ppm"])
    calib = read_calibration(paths[".calib"])
    return Frame(
        points=cloud,
        image=image,
        calibration=calib,
        labels=PanopticLabeling(ids, registry),
        frame_id=frame_id,
    )


def write_manifest(split_dir, frame_ids):
    Path(split_dir, "manifest.txt").write_text("\n".join(frame_ids) + "\n")


def read_manifest(split_dir):
    path = Path(split_dir, "manifest.txt")
    if not path.exists():
        raise FileNotFoundError(f"missing manifest {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def write_registry(root, registry):
    Path(root, "classes.txt").write_text("\n".join(registry.to_lines()) + "\n")


def read_registry(root):
    path = Path(root, "classes.txt")
    if not path.exists():
        return ClassRegistry.default()
    return ClassRegistry.from_lines(path.read_text().splitlines())


def load_split(root, split):
    split_dir = Path(root, split)
    if not split_dir.is_dir():
        raise FileNotFoundError(f"missing dataset split {split_dir}")
    registry = read_registry(root)
    return [load_frame(split_dir, fid, registry) for fid in read_manifest(split_dir)]
