"""Structured modality dropout for labeled source frames.

Exactly one modality is mutated per call.  On the image side, patches on
object boundaries (found via edge density) and one interior patch per thing
instance are zeroed.  On the LiDAR side, the features of points in
label-discontinuous voxels and of one per-instance cluster sharing an image
patch are zeroed.  Point coordinates are never modified.

The expensive frame analysis (edges, patch footprints, voxel boundaries) is
independent of the random draws, so it can be computed once per frame with
``prepare_drop_regions`` and replayed under many seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CameraImage,
    PANOPTIC_BASE,
    PointCloud,
    Frame,
    build_cylindrical_grid,
    project_points,
)
from .edges import canny_edges
from .validation import check_probability

DEFAULT_PATCH_SIZE = 32
DEFAULT_EDGE_FRACTION = 0.02


@dataclass(frozen=True)
class DropRatios:
    """Dropout configuration; defaults follow the standard recipe."""

    image_boundary: float = 0.5
    lidar_boundary: float = 0.7
    image_instance: float = 0.5
    lidar_instance: float = 0.5
    image_prob: float = 0.5
    patch_size: int = DEFAULT_PATCH_SIZE
    edge_fraction_min: float = DEFAULT_EDGE_FRACTION
    edge_low: float = 0.1
    edge_high: float = 0.2
    content_agnostic: bool = False

    def __post_init__(self):
        for name in ("image_boundary", "lidar_boundary", "image_instance",
                     "lidar_instance", "image_prob"):
            check_probability(getattr(self, name), name)
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.edge_fraction_min < 0:
            raise ValueError("edge_fraction_min must be >= 0")


@dataclass(frozen=True)
class DropRegions:
    """Seed-independent dropout candidates for one frame."""

    patch_size: int
    patch_grid: tuple  # (n_rows, n_cols)
    boundary_patches: tuple
    instance_patches: dict  # instance id -> tuple of (row, col) patches
    instance_patch_points: dict  # instance id -> {(row, col): point indices}
    boundary_voxels: tuple
    voxel_points: dict  # flat voxel -> point indices (all occupied voxels)
    patch_points: dict  # (row, col) -> indices of all points projecting there


@dataclass(frozen=True)
class DropReport:
    """What one dropout application did."""

    modality: str
    patch_size: int
    boundary_patches_total: int = 0
    boundary_patches_dropped: tuple = ()
    instances_eligible: int = 0
    instance_patches_dropped: tuple = ()
    boundary_voxels_total: int = 0
    boundary_voxels_dropped: tuple = ()
    dropped_points: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def to_line(self):
        bp = ";".join(f"{r}:{c}" for r, c in self.boundary_patches_dropped)
        ip = ";".join(f"{i}@{r}:{c}" for i, (r, c) in self.instance_patches_dropped)
        vx = ";".join(str(v) for v in self.boundary_voxels_dropped)
        pts = ";".join(str(p) for p in self.dropped_points)
        return (
            f"modality={self.modality} patch_size={self.patch_size} "
            f"boundary_total={self.boundary_patches_total} boundary={bp} "
            f"instances={self.instances_eligible} instance={ip} "
            f"voxel_total={self.boundary_voxels_total} voxels={vx} points={pts}"
        )

    @classmethod
    def from_line(cls, line):
        fields = dict(part.split("=", 1) for part in line.strip().split(" "))

        def pairs(text):
            return tuple(
                tuple(int(x) for x in item.split(":")) for item in text.split(";") if item
            )

        ip = tuple(
            (int(item.split("@")[0]),
             tuple(int(x) for x in item.split("@")[1].split(":")))
            for item in fields["instance"].split(";")
            if item
        )
        ints = lambda text: tuple(int(x) for x in text.split(";") if x)
        return cls(
            modality=fields["modality"],
            patch_size=int(fields["patch_size"]),
            boundary_patches_total=int(fields["boundary_total"]),
            boundary_patches_dropped=pairs(fields["boundary"]),
            instances_eligible=int(fields["instances"]),
            instance_patches_dropped=ip,
            boundary_voxels_total=int(fields["voxel_total"]),
            boundary_voxels_dropped=ints(fields["voxels"]),
            dropped_points=np.asarray(ints(fields["points"]), dtype=np.int64),
        )


# ---------------------------------------------------------------------------
# candidate detection
# ---------------------------------------------------------------------------

def boundary_patches_from_edges(edges, patch_size, edge_fraction_min=DEFAULT_EDGE_FRACTION):
    """Patches whose edge-pixel fraction reaches the threshold.

    A patch qualifies iff it holds at least one edge pixel and the fraction
    of edge pixels over the (possibly clipped) patch area is >= the minimum.
    """
    edges = np.asarray(edges, dtype=bool)
    h, w = edges.shape
    p = int(patch_size)
    out = []
    for r in range(0, (h + p - 1) // p):
        for c in range(0, (w + p - 1) // p):
            block = edges[r * p : min((r + 1) * p, h), c * p : min((c + 1) * p, w)]
            count = int(block.sum())
            if count >= 1 and count / block.size >= edge_fraction_min:
                out.append((r, c))
    return out


def detect_image_boundary_patches(
    image, patch_size=DEFAULT_PATCH_SIZE, edge_fraction_min=DEFAULT_EDGE_FRACTION,
    low=0.1, high=0.2,
):
    """Edge detection plus patch thresholding; returns sorted (row, col) pairs."""
    return boundary_patches_from_edges(canny_edges(image, low, high), patch_size,
                                       edge_fraction_min)


def detect_voxel_boundaries(grid, label_ids):
    """Occupied voxels whose majority class differs from an axis neighbor's.

    The majority vote per voxel ignores ignore-labeled points and breaks ties
    toward the lower class id; azimuth neighbors wrap around.  Returns a
    sorted array of flat voxel indices.
    """
    label_ids = np.asarray(label_ids, dtype=np.int64)
    if label_ids.shape[0] != grid.voxel_index.shape[0]:
        raise ValueError("labels do not match grid point count")
    classes = label_ids // PANOPTIC_BASE

    majority = {}
    for vox, members in grid.points_by_voxel().items():
        cls = classes[members]
        cls = cls[cls > 0]
        if cls.size == 0:
            continue
        values, counts = np.unique(cls, return_counts=True)
        majority[vox] = int(values[np.argmax(counts)])  # unique is sorted: ties go low

    boundary = []
    for vox, label in majority.items():
        for nb in grid.axis_neighbors(vox):
            other = majority.get(nb)
            if other is not None and other != label:
                boundary.append(vox)
                break
    return np.array(sorted(boundary), dtype=np.int64)


def prepare_drop_regions(frame, ratios=DropRatios()):
    """Compute every dropout candidate of a labeled frame once."""
    if frame.labels is None:
        raise ValueError("dropout needs ground-truth labels")
    p = ratios.patch_size
    h, w = frame.image.height, frame.image.width
    edges = canny_edges(frame.image, ratios.edge_low, ratios.edge_high)
    boundary_patches = boundary_patches_from_edges(edges, p, ratios.edge_fraction_min)

    proj = project_points(frame.points, frame.calibration, (w, h))
    row, col = proj.pixel_indices()
    valid = proj.valid
    patch_row = np.where(valid, row // p, -1)
    patch_col = np.where(valid, col // p, -1)

    patch_points = {}
    for i in np.nonzero(valid)[0]:
        patch_points.setdefault((int(patch_row[i]), int(patch_col[i])), []).append(i)
    patch_points = {k: np.asarray(v, dtype=np.int64) for k, v in patch_points.items()}

    cls = frame.labels.class_ids()
    inst = frame.labels.instance_ids()
    reg = frame.labels.registry
    thing = np.isin(cls, reg.thing_ids)
    instance_patches, instance_patch_points = {}, {}
    for pid in np.unique(frame.labels.ids[thing]):
        key = int(pid)
        member = np.nonzero((frame.labels.ids == pid) & valid)[0]
        groups = {}
        for i in member:
            groups.setdefault((int(patch_row[i]), int(patch_col[i])), []).append(i)
        if not groups:
            continue
        instance_patches[key] = tuple(sorted(groups))
        instance_patch_points[key] = {
            k: np.asarray(v, dtype=np.int64) for k, v in groups.items()
        }

    grid = build_cylindrical_grid(frame.points)
    voxel_points = grid.points_by_voxel()
    boundary_voxels = detect_voxel_boundaries(grid, frame.labels.ids)

    return DropRegions(
        patch_size=p,
        patch_grid=((h + p - 1) // p, (w + p - 1) // p),
        boundary_patches=tuple(boundary_patches),
        instance_patches=instance_patches,
        instance_patch_points=instance_patch_points,
        boundary_voxels=tuple(int(v) for v in boundary_voxels),
        voxel_points=voxel_points,
        patch_points=patch_points,
    )


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------

def _zero_patch(rgb, patch, p):
    r, c = patch
    rgb[r * p : (r + 1) * p, c * p : (c + 1) * p] = 0.0


def apply_modal_dropout(frame, ratios=DropRatios(), seed=0, regions=None):
    """Mutate exactly one randomly chosen modality; returns (frame, report).

    The image modality is chosen with probability ``ratios.image_prob``.
    All random draws follow a fixed order (modality, then boundary regions
    in sorted order, then instances in sorted id order), so results are a
    pure function of the frame, the ratios and the seed.
    """
    if regions is None:
        regions = prepare_drop_regions(frame, ratios)
    rng = np.random.default_rng(seed)
    p = regions.patch_size

    if rng.random() < ratios.image_prob:
        rgb = frame.image.rgb.copy()
        boundary = regions.boundary_patches
        if ratios.content_agnostic and boundary:
            nr, nc = regions.patch_grid
            flat = rng.choice(nr * nc, size=min(len(boundary), nr * nc), replace=False)
            boundary = tuple(sorted((int(f) // nc, int(f) % nc) for f in flat))
        dropped = []
        for patch in boundary:
            if rng.random() < ratios.image_boundary:
                _zero_patch(rgb, patch, p)
                dropped.append(patch)
        inst_dropped = []
        for key in sorted(regions.instance_patches):
            if ratios.content_agnostic:
                nr, nc = regions.patch_grid
                candidates = tuple((r, c) for r in range(nr) for c in range(nc))
            else:
                candidates = regions.instance_patches[key]
            if rng.random() < ratios.image_instance:
                patch = candidates[int(rng.integers(len(candidates)))]
                _zero_patch(rgb, patch, p)
                inst_dropped.append((key, patch))
        out = Frame(
            points=frame.points,
            image=CameraImage(rgb=rgb),
            calibration=frame.calibration,
            labels=frame.labels,
            frame_id=frame.frame_id,
        )
        report = DropReport(
            modality="image",
            patch_size=p,
            boundary_patches_total=len(boundary),
            boundary_patches_dropped=tuple(dropped),
            instances_eligible=len(regions.instance_patches),
            instance_patches_dropped=tuple(inst_dropped),
        )
        return out, report

    features = frame.points.features.copy()
    zeroed = np.zeros(frame.points.n, dtype=bool)
    voxels = regions.boundary_voxels
    if ratios.content_agnostic and voxels:
        occupied = sorted(regions.voxel_points)
        pick = rng.choice(len(occupied), size=min(len(voxels), len(occupied)), replace=False)
        voxels = tuple(sorted(occupied[int(i)] for i in pick))
    vox_dropped = []
    for vox in voxels:
        if rng.random() < ratios.lidar_boundary:
            features[regions.voxel_points[vox]] = 0.0
            zeroed[regions.voxel_points[vox]] = True
            vox_dropped.append(int(vox))
    inst_dropped = []
    for key in sorted(regions.instance_patch_points):
        if ratios.content_agnostic:
            candidates = sorted(regions.patch_points)
        else:
            candidates = list(regions.instance_patches[key])
        if not candidates:
            continue
        if rng.random() < ratios.lidar_instance:
            patch = candidates[int(rng.integers(len(candidates)))]
            if ratios.content_agnostic:
                members = regions.patch_points[patch]
            else:
                members = regions.instance_patch_points[key][patch]
            features[members] = 0.0
            zeroed[members] = True
            inst_dropped.append((key, tuple(int(x) for x in patch)))
    out = Frame(
        points=PointCloud(positions=frame.points.positions, features=features),
        image=frame.image,
        calibration=frame.calibration,
        labels=frame.labels,
        frame_id=frame.frame_id,
    )
    report = DropReport(
        modality="lidar",
        patch_size=p,
        instances_eligible=len(regions.instance_patch_points),
        instance_patches_dropped=tuple(inst_dropped),
        boundary_voxels_total=len(voxels),
        boundary_voxels_dropped=tuple(vox_dropped),
        dropped_points=np.nonzero(zeroed)[0],
    )
    return out, report
