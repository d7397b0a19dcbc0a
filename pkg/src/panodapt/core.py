"""Core geometry substrate.

Domain types (point clouds, images, calibration, panoptic labelings),
panoptic id encoding, cylindrical voxelization, LiDAR-to-camera projection
and point-mask IoU.  Point masks are plain boolean numpy arrays of length N;
no wrapper type is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import as_bool_mask, as_float_array, as_int_array, as_positions

PANOPTIC_BASE = 1000
IGNORE_ID = 0
VOXEL_SENTINEL = -1

DEFAULT_GRID_DIMS = (480, 360, 32)
DEFAULT_RADIAL_RANGE = (0.0, 50.0)
DEFAULT_HEIGHT_RANGE = (-5.0, 3.0)


# ---------------------------------------------------------------------------
# panoptic id encoding
# ---------------------------------------------------------------------------

def encode_panoptic(class_id, instance_id):
    """Pack (class_id, instance_id) into a single id: class * 1000 + instance.

    Accepts scalars or arrays.  Instance ids must stay below 1000; stuff
    segments use instance id 0.  Id 0 (class 0, instance 0) is the ignore id.
    """
    class_id = np.asarray(class_id, dtype=np.int64)
    instance_id = np.asarray(instance_id, dtype=np.int64)
    if np.any(class_id < 0) or np.any(instance_id < 0):
        raise ValueError("class_id and instance_id must be non-negative")
    if np.any(instance_id >= PANOPTIC_BASE):
        raise ValueError(f"instance_id must be < {PANOPTIC_BASE} (encoding overflow)")
    out = class_id * PANOPTIC_BASE + instance_id
    return int(out) if out.ndim == 0 else out


def decode_panoptic(panoptic_id):
    """Inverse of :func:`encode_panoptic`; returns (class_id, instance_id)."""
    pid = np.asarray(panoptic_id, dtype=np.int64)
    if np.any(pid < 0):
        raise ValueError("panoptic ids must be non-negative")
    cls = pid // PANOPTIC_BASE
    inst = pid % PANOPTIC_BASE
    if pid.ndim == 0:
        return int(cls), int(inst)
    return cls, inst


# ---------------------------------------------------------------------------
# class registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassSpec:
    class_id: int
    name: str
    thing: bool


class ClassRegistry:
    """Ordered collection of semantic classes tagged thing or stuff.

    Class id 0 is reserved for ignore and may not appear in the registry.
    Model outputs are indexed by registry order; ``model_index`` maps a class
    id to that index.
    """

    def __init__(self, classes):
        classes = list(classes)
        if not classes:
            raise ValueError("registry must contain at least one class")
        ids = [c.class_id for c in classes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate class ids in registry")
        if any(i <= 0 for i in ids):
            raise ValueError("class ids must be >= 1 (0 is the ignore id)")
        self._classes = tuple(classes)
        self._index = {c.class_id: i for i, c in enumerate(classes)}

    def __len__(self):
        return len(self._classes)

    def __iter__(self):
        return iter(self._classes)

    def __eq__(self, other):
        return isinstance(other, ClassRegistry) and self._classes == other._classes

    @property
    def class_ids(self):
        return np.array([c.class_id for c in self._classes], dtype=np.int64)

    @property
    def thing_ids(self):
        return np.array([c.class_id for c in self._classes if c.thing], dtype=np.int64)

    @property
    def stuff_ids(self):
        return np.array([c.class_id for c in self._classes if not c.thing], dtype=np.int64)

    def is_thing(self, class_id):
        spec = self.get(class_id)
        return spec.thing

    def get(self, class_id):
        idx = self._index.get(int(class_id))
        if idx is None:
            raise ValueError(f"unknown class id {class_id}")
        return self._classes[idx]

    def model_index(self, class_id):
        idx = self._index.get(int(class_id))
        if idx is None:
            raise ValueError(f"unknown class id {class_id}")
        return idx

    def model_indices(self, class_ids):
        class_ids = np.asarray(class_ids, dtype=np.int64)
        out = np.empty(class_ids.shape, dtype=np.int64)
        flat_in, flat_out = class_ids.ravel(), out.ravel()
        for i, cid in enumerate(flat_in):
            flat_out[i] = self.model_index(cid)
        return out

    def id_for_index(self, index):
        return self._classes[index].class_id

    def to_lines(self):
        return [
            f"{c.class_id} {'thing' if c.thing else 'stuff'} {c.name}" for c in self._classes
        ]

    @classmethod
    def from_lines(cls, lines):
        classes = []
        for line in lines:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 2)
            if len(parts) != 3 or parts[1] not in ("thing", "stuff"):
                raise ValueError(f"bad registry line: {line!r}")
            classes.append(ClassSpec(int(parts[0]), parts[2], parts[1] == "thing"))
        return cls(classes)

    @classmethod
    def default(cls):
        return cls(
            [
                ClassSpec(1, "ground", False),
                ClassSpec(2, "wall", False),
                ClassSpec(3, "box", True),
                ClassSpec(4, "cylinder", True),
                ClassSpec(5, "sphere", True),
            ]
        )


# ---------------------------------------------------------------------------
# immutable data types
# ---------------------------------------------------------------------------

def _freeze(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Positions (N,3) plus per-point features (N,F), both float64, immutable."""

    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        pos = as_positions(self.positions)
        feat = as_float_array(self.features, "features")
        if feat.ndim != 2 or feat.shape[0] != pos.shape[0]:
            raise ValueError(
                f"features shape {feat.shape} does not match {pos.shape[0]} points"
            )
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "features", _freeze(feat))

    @property
    def n(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class CameraImage:
    """RGB image, float64 in [0, 1], shape (H, W, 3), immutable."""

    rgb: np.ndarray

    def __post_init__(self):
        rgb = as_float_array(self.rgb, "rgb")
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"rgb must have shape (H, W, 3), got {rgb.shape}")
        if rgb.min() < 0.0 or rgb.max() > 1.0:
            raise ValueError("rgb values must lie in [0, 1]")
        object.__setattr__(self, "rgb", _freeze(rgb))

    @property
    def height(self):
        return self.rgb.shape[0]

    @property
    def width(self):
        return self.rgb.shape[1]


@dataclass(frozen=True)
class Calibration:
    """Pinhole intrinsics (3,3) and a rigid LiDAR-to-camera extrinsic (4,4)."""

    intrinsic: np.ndarray
    extrinsic: np.ndarray

    def __post_init__(self):
        K = as_float_array(self.intrinsic, "intrinsic", shape=(3, 3))
        E = as_float_array(self.extrinsic, "extrinsic", shape=(4, 4))
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        R = E[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("extrinsic rotation is not orthonormal (tol 1e-9)")
        if np.max(np.abs(E[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 0:
            raise ValueError("last extrinsic row must be [0, 0, 0, 1]")
        object.__setattr__(self, "intrinsic", _freeze(K))
        object.__setattr__(self, "extrinsic", _freeze(E))

    @property
    def fx(self):
        return float(self.intrinsic[0, 0])

    @property
    def fy(self):
        return float(self.intrinsic[1, 1])

    @property
    def cx(self):
        return float(self.intrinsic[0, 2])

    @property
    def cy(self):
        return float(self.intrinsic[1, 2])

    @classmethod
    def from_values(cls, fx, fy, cx, cy, extrinsic=None):
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        if extrinsic is None:
            extrinsic = np.eye(4)
        return cls(K, np.asarray(extrinsic, dtype=np.float64))


@dataclass(frozen=True)
class PanopticLabeling:
    """Per-point panoptic ids tied to a class registry.

    Invariants checked at construction: ids decode to registered classes (or
    the ignore id), stuff points carry instance id 0 and thing points carry
    instance ids >= 1.
    """

    ids: np.ndarray
    registry: ClassRegistry

    def __post_init__(self):
        ids = as_int_array(self.ids, "ids")
        cls, inst = decode_panoptic(ids)
        known = set(int(c) for c in self.registry.class_ids)
        for c in np.unique(cls):
            c = int(c)
            if c == IGNORE_ID:
                if np.any(inst[cls == c] != 0):
                    raise ValueError("ignore points must have instance id 0")
                continue
            if c not in known:
                raise ValueError(f"labeling uses unregistered class id {c}")
            if self.registry.is_thing(c):
                if np.any(inst[cls == c] < 1):
                    raise ValueError(f"thing class {c} has instance id 0")
            elif np.any(inst[cls == c] != 0):
                raise ValueError(f"stuff class {c} has non-zero instance ids")
        object.__setattr__(self, "ids", _freeze(ids))

    @property
    def n(self):
        return self.ids.shape[0]

    def class_ids(self):
        return self.ids // PANOPTIC_BASE

    def instance_ids(self):
        return self.ids % PANOPTIC_BASE

    def subset(self, mask):
        mask = as_bool_mask(mask, self.n)
        return PanopticLabeling(self.ids[mask], self.registry)


@dataclass(frozen=True)
class Frame:
    """One multimodal sample: points, camera image, calibration, optional labels."""

    points: PointCloud
    image: CameraImage
    calibration: Calibration
    labels: PanopticLabeling | None = None
    frame_id: str = ""

    def __post_init__(self):
        if self.labels is not None and self.labels.n != self.points.n:
            raise ValueError(
                f"labels cover {self.labels.n} points but cloud has {self.points.n}"
            )


# ---------------------------------------------------------------------------
# cylindrical voxel grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CylindricalVoxelGrid:
    """Per-point cylindrical voxel assignment.

    Bins: radial r in [r_min, r_max], azimuth from the +x axis increasing
    counter-clockwise and wrapping at 2*pi, height z in [z_min, z_max].
    Points outside the radial or height range get VOXEL_SENTINEL (-1).  The
    upper radial/height edge is closed (points exactly at r_max fall in the
    last bin).  Flat index = (radial * n_azimuth + azimuth) * n_height + height.
    """

    dims: tuple
    radial_range: tuple
    height_range: tuple
    voxel_index: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "voxel_index", _freeze(np.asarray(self.voxel_index)))

    @property
    def n_voxels(self):
        return int(np.prod(self.dims))

    def ravel(self, radial, azimuth, height):
        nr, na, nz = self.dims
        radial = np.asarray(radial, dtype=np.int64)
        azimuth = np.asarray(azimuth, dtype=np.int64)
        height = np.asarray(height, dtype=np.int64)
        if np.any((radial < 0) | (radial >= nr) | (azimuth < 0) | (azimuth >= na) | (height < 0) | (height >= nz)):
            raise ValueError("voxel coordinates out of range")
        out = (radial * na + azimuth) * nz + height
        return int(out) if out.ndim == 0 else out

    def unravel(self, flat):
        nr, na, nz = self.dims
        flat = np.asarray(flat, dtype=np.int64)
        if np.any((flat < 0) | (flat >= self.n_voxels)):
            raise ValueError("flat voxel index out of range")
        height = flat % nz
        rest = flat // nz
        azimuth = rest % na
        radial = rest // na
        if flat.ndim == 0:
            return int(radial), int(azimuth), int(height)
        return radial, azimuth, height

    def axis_neighbors(self, flat):
        """The (up to) six face neighbors of a voxel; azimuth wraps around."""
        nr, na, nz = self.dims
        ri, ai, zi = self.unravel(int(flat))
        out = []
        if ri > 0:
            out.append(self.ravel(ri - 1, ai, zi))
        if ri < nr - 1:
            out.append(self.ravel(ri + 1, ai, zi))
        out.append(self.ravel(ri, (ai - 1) % na, zi))
        out.append(self.ravel(ri, (ai + 1) % na, zi))
        if zi > 0:
            out.append(self.ravel(ri, ai, zi - 1))
        if zi < nz - 1:
            out.append(self.ravel(ri, ai, zi + 1))
        return out

    def points_by_voxel(self):
        """Dict flat voxel index -> array of point indices (in-range points only)."""
        idx = self.voxel_index
        valid = np.nonzero(idx != VOXEL_SENTINEL)[0]
        order = valid[np.argsort(idx[valid], kind="stable")]
        sorted_vox = idx[order]
        out = {}
        if order.size:
            boundaries = np.nonzero(np.diff(sorted_vox))[0] + 1
            starts = np.concatenate(([0], boundaries))
            ends = np.concatenate((boundaries, [order.size]))
            for s, e in zip(starts, ends):
                out[int(sorted_vox[s])] = order[s:e]
        return out


def build_cylindrical_grid(
    points,
    dims=DEFAULT_GRID_DIMS,
    radial_range=DEFAULT_RADIAL_RANGE,
    height_range=DEFAULT_HEIGHT_RANGE,
):
    """Assign every point of a cloud to a cylindrical voxel (or the sentinel)."""
    if isinstance(points, PointCloud):
        pos = points.positions
    else:
        pos = as_positions(points)
    nr, na, nz = (int(d) for d in dims)
    if nr < 1 or na < 1 or nz < 1:
        raise ValueError(f"grid dims must be >= 1, got {dims}")
    r_min, r_max = (float(v) for v in radial_range)
    z_min, z_max = (float(v) for v in height_range)
    if not (r_max > r_min) or not (z_max > z_min):
        raise ValueError("voxel ranges must be non-degenerate")

    r = np.hypot(pos[:, 0], pos[:, 1])
    theta = np.mod(np.arctan2(pos[:, 1], pos[:, 0]), 2.0 * np.pi)
    z = pos[:, 2]

    ri = np.floor((r - r_min) / (r_max - r_min) * nr).astype(np.int64)
    ai = np.floor(theta / (2.0 * np.pi) * na).astype(np.int64)
    zi = np.floor((z - z_min) / (z_max - z_min) * nz).astype(np.int64)
    # closed upper edge: r == r_max / z == z_max land in the last bin
    ri[r == r_max] = nr - 1
    zi[z == z_max] = nz - 1
    ai = np.clip(ai, 0, na - 1)  # guards theta == 2*pi after float round-off

    in_range = (r >= r_min) & (r <= r_max) & (z >= z_min) & (z <= z_max)
    flat = (ri * na + ai) * nz + zi
    flat[~in_range] = VOXEL_SENTINEL
    return CylindricalVoxelGrid(
        dims=(nr, na, nz),
        radial_range=(r_min, r_max),
        height_range=(z_min, z_max),
        voxel_index=flat,
    )


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Projection:
    """Per-point pinhole projection: real pixel coords, depth and validity."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    valid: np.ndarray

    def pixel_indices(self):
        """Rounded (row, col) for valid points; invalid entries are -1."""
        row = np.full(self.u.shape, -1, dtype=np.int64)
        col = np.full(self.u.shape, -1, dtype=np.int64)
        row[self.valid] = np.rint(self.v[self.valid]).astype(np.int64)
        col[self.valid] = np.rint(self.u[self.valid]).astype(np.int64)
        return row, col


def project_points(points, calibration, image_size=(640, 360)):
    """Project LiDAR points into the camera.

    A point is valid iff its camera depth is > 0 and the real-valued pixel
    coordinates fall inside [0, W-1] x [0, H-1], so rounding stays in range.
    """
    if isinstance(points, PointCloud):
        pos = points.positions
    else:
        pos = as_positions(points)
    width, height = int(image_size[0]), int(image_size[1])
    E = calibration.extrinsic
    cam = pos @ E[:3, :3].T + E[:3, 3]
    depth = cam[:, 2]
    safe = np.where(depth > 0, depth, 1.0)
    u = calibration.fx * cam[:, 0] / safe + calibration.cx
    v = calibration.fy * cam[:, 1] / safe + calibration.cy
    valid = (depth > 0) & (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)
    return Projection(u=u, v=v, depth=depth, valid=valid)


# ---------------------------------------------------------------------------
# mask IoU
# ---------------------------------------------------------------------------

def mask_iou(a, b):
    """Intersection over union of two boolean point masks; 0 if both empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype != np.bool_ or b.dtype != np.bool_:
        raise ValueError("mask_iou expects boolean arrays")
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return inter / union
