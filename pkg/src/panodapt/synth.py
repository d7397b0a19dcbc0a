"""Synthetic multimodal scenes with a controllable domain shift.

Scenes hold a ground disc, a wall slab and a handful of thing objects (boxes,
cylinders, spheres) around a sensor at the origin, with the camera looking
along +x.  The image is rendered by painting projected points over a sky
gradient, so point colors and pixel colors agree by construction.  The
domain shift degrades the image (gamma, noise) and the cloud (uniform point
drop, beam decimation, feature noise) without ever touching geometry of the
surviving points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import (
    Calibration,
    CameraImage,
    ClassRegistry,
    Frame,
    PANOPTIC_BASE,
    PanopticLabeling,
    PointCloud,
    encode_panoptic,
    project_points,
)
from .validation import check_probability, check_positive

# colors / intensities are assigned by registry order and cycled when a
# registry has more classes than the palette
PALETTE = (
    (0.42, 0.40, 0.38),
    (0.78, 0.32, 0.16),
    (0.16, 0.45, 0.85),
    (0.85, 0.76, 0.18),
    (0.58, 0.16, 0.70),
    (0.20, 0.70, 0.40),
    (0.90, 0.50, 0.70),
    (0.25, 0.75, 0.80),
)
INTENSITY_BASES = (0.20, 0.40, 0.50, 0.65, 0.80, 0.35, 0.60, 0.90)
INTENSITY_NOISE = 0.12

SKY_TOP = (0.75, 0.82, 0.92)
SKY_BOTTOM = (0.18, 0.17, 0.16)

BEAM_COUNT = 32
BEAM_ELEVATION_RANGE = (-0.75, 0.55)


def class_color(registry, class_id):
    return np.array(PALETTE[registry.model_index(class_id) % len(PALETTE)])


def class_intensity(registry, class_id):
    return INTENSITY_BASES[registry.model_index(class_id) % len(INTENSITY_BASES)]


def default_calibration(image_size=(640, 360), focal=350.0):
    """Camera at the sensor origin looking along +x (z-forward camera frame)."""
    width, height = image_size
    extrinsic = np.array(
        [
            [0.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    return Calibration.from_values(
        focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, extrinsic
    )


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    registry: ClassRegistry = field(default_factory=ClassRegistry.default)
    object_count: tuple = (2, 6)
    points_per_object: tuple = (60, 240)
    ground_points: int = 1200
    wall_points: int = 300
    extent: float = 20.0
    sensor_height: float = 1.7
    object_sector: float = 0.55
    image_size: tuple = (640, 360)
    focal: float = 350.0

    def __post_init__(self):
        if len(self.registry.stuff_ids) < 1 or len(self.registry.thing_ids) < 1:
            raise ValueError("registry needs at least one stuff and one thing class")
        lo, hi = self.object_count
        if not (0 <= lo <= hi):
            raise ValueError(f"bad object_count range {self.object_count}")
        plo, phi = self.points_per_object
        if plo < 20 or phi < plo:
            raise ValueError("points_per_object must satisfy 20 <= lo <= hi")
        if phi >= PANOPTIC_BASE:
            raise ValueError("points_per_object upper bound unreasonably large")
        if self.ground_points < 3:
            raise ValueError("ground_points must be >= 3")
        check_positive(self.extent, "extent")

    def calibration(self):
        return default_calibration(self.image_size, self.focal)


@dataclass(frozen=True)
class ShiftParams:
    image_gamma: float = 1.0
    image_noise_sigma: float = 0.0
    point_drop_prob: float = 0.0
    beam_keep_fraction: float = 1.0
    feature_noise_sigma: float = 0.0

    def __post_init__(self):
        check_positive(self.image_gamma, "image_gamma")
        check_positive(self.image_noise_sigma, "image_noise_sigma", strict=False)
        check_probability(self.point_drop_prob, "point_drop_prob")
        if not 0.0 < self.beam_keep_fraction <= 1.0:
            raise ValueError("beam_keep_fraction must lie in (0, 1]")
        check_positive(self.feature_noise_sigma, "feature_noise_sigma", strict=False)

    def is_identity(self):
        return (
            self.image_gamma == 1.0
            and self.image_noise_sigma == 0.0
            and self.point_drop_prob == 0.0
            and self.beam_keep_fraction == 1.0
            and self.feature_noise_sigma == 0.0
        )


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------

def _sample_box(rng, count, ground_z):
    half = np.array([rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0.3, 1.0)])
    yaw = rng.uniform(0.0, 2.0 * np.pi)
    # the bottom face rests on the ground and is never visible, so the side
    # faces count twice and the top face once
    areas = np.array([2.0 * half[1] * half[2], 2.0 * half[0] * half[2], half[0] * half[1]])
    axis = rng.choice(3, size=count, p=areas / areas.sum())
    sign = rng.choice([-1.0, 1.0], size=count)
    sign[axis == 2] = 1.0
    pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    pts[np.arange(count), axis] = sign * half[axis]
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    pts = pts @ rot.T
    pts[:, 2] += ground_z + half[2]
    return pts


def _sample_cylinder(rng, count, ground_z):
    radius = rng.uniform(0.25, 0.6)
    height = rng.uniform(0.8, 2.0)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
    z = rng.uniform(0.0, height, size=count)
    return np.stack(
        [radius * np.cos(theta), radius * np.sin(theta), ground_z + z], axis=1
    )


def _sample_sphere(rng, count, ground_z):
    radius = rng.uniform(0.3, 0.7)
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # the sensor sits above the sphere center, so the lower half is occluded
    direction[:, 2] = np.abs(direction[:, 2])
    pts = direction * radius
    pts[:, 2] += ground_z + radius
    return pts


_SHAPE_SAMPLERS = (_sample_box, _sample_cylinder, _sample_sphere)


def _render_image(positions, point_colors, calib, image_size):
    width, height = image_size
    rows = np.arange(height, dtype=np.float64)[:, None, None] / max(height - 1, 1)
    rgb = (1.0 - rows) * np.array(SKY_TOP) + rows * np.array(SKY_BOTTOM)
    rgb = np.broadcast_to(rgb, (height, width, 3)).copy()

    proj = project_points(positions, calib, image_size)
    order = np.argsort(-proj.depth, kind="stable")
    order = order[proj.valid[order]]
    row, col = proj.pixel_indices()
    row, col = row[order], col[order]
    colors = point_colors[order]
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            rr = np.clip(row + dy, 0, height - 1)
            cc = np.clip(col + dx, 0, width - 1)
            rgb[rr, cc] = colors
    return CameraImage(rgb=np.clip(rgb, 0.0, 1.0))


def generate_scene(config):
    """Build one labeled frame; fully determined by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    reg = config.registry
    ground_z = -config.sensor_height
    sector = config.object_sector

    chunks, label_chunks = [], []

    # ground disc
    n_g = config.ground_points
    radius = config.extent * np.sqrt(rng.random(n_g))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n_g)
    ground = np.stack(
        [radius * np.cos(theta), radius * np.sin(theta),
         ground_z + rng.normal(0.0, 0.015, size=n_g)],
        axis=1,
    )
    ground_id = int(reg.stuff_ids[0])
    chunks.append(ground)
    label_chunks.append(np.full(n_g, encode_panoptic(ground_id, 0), dtype=np.int64))

    # one wall slab, if the registry has a second stuff class
    if len(reg.stuff_ids) > 1 and config.wall_points > 0:
        phi = rng.uniform(-sector, sector)
        dist = rng.uniform(0.70, 0.90) * config.extent
        half_width = rng.uniform(4.0, 7.0)
        wall_height = rng.uniform(1.8, 2.6)
        tangent = np.array([-np.sin(phi), np.cos(phi), 0.0])
        center = np.array([dist * np.cos(phi), dist * np.sin(phi), 0.0])
        s = rng.uniform(-half_width, half_width, size=config.wall_points)
        hz = rng.uniform(0.0, wall_height, size=config.wall_points)
        wall = center + s[:, None] * tangent
        wall[:, 2] = ground_z + hz
        wall += rng.normal(0.0, 0.01, size=wall.shape)
        wall_id = int(reg.stuff_ids[1])
        chunks.append(wall)
        label_chunks.append(
            np.full(config.wall_points, encode_panoptic(wall_id, 0), dtype=np.int64)
        )

    # thing objects; instance ids run 1..n across classes.  Objects stay
    # clear of the wall band (which starts at 0.70 * extent) and of each
    # other, so nearby instances do not fuse into one density cluster.
    n_obj = int(rng.integers(config.object_count[0], config.object_count[1] + 1))
    thing_ids = reg.thing_ids
    placed = []
    for j in range(n_obj):
        cls = int(thing_ids[rng.integers(len(thing_ids))])
        count = int(rng.integers(config.points_per_object[0], config.points_per_object[1] + 1))
        sampler = _SHAPE_SAMPLERS[reg.model_index(cls) % len(_SHAPE_SAMPLERS)]
        pts = sampler(rng, count, ground_z)
        for _ in range(20):
            phi = rng.uniform(-sector, sector)
            dist = rng.uniform(4.0, 0.60 * config.extent)
            center = np.array([dist * np.cos(phi), dist * np.sin(phi)])
            if all(np.hypot(*(center - c)) >= 3.0 for c in placed):
                break
        placed.append(center)
        pts[:, 0] += center[0]
        pts[:, 1] += center[1]
        pts += rng.normal(0.0, 0.005, size=pts.shape)
        chunks.append(pts)
        label_chunks.append(np.full(count, encode_panoptic(cls, j + 1), dtype=np.int64))

    positions = np.concatenate(chunks, axis=0)
    ids = np.concatenate(label_chunks)
    class_per_point = ids // PANOPTIC_BASE

    bases = np.array([class_intensity(reg, c) for c in class_per_point])
    intensity = np.clip(
        bases + rng.uniform(-INTENSITY_NOISE, INTENSITY_NOISE, size=bases.shape), 0.0, 1.0
    )

    calib = config.calibration()
    colors = np.stack([class_color(reg, c) for c in class_per_point])
    image = _render_image(positions, colors, calib, config.image_size)

    return Frame(
        points=PointCloud(positions=positions, features=intensity[:, None]),
        image=image,
        calibration=calib,
        labels=PanopticLabeling(ids, reg),
    )


# ---------------------------------------------------------------------------
# domain shift
# ---------------------------------------------------------------------------

def _beam_keep_mask(positions, keep_fraction):
    lo, hi = BEAM_ELEVATION_RANGE
    elevation = np.arctan2(positions[:, 2], np.hypot(positions[:, 0], positions[:, 1]))
    beam = np.clip(
        np.floor((elevation - lo) / (hi - lo) * BEAM_COUNT).astype(np.int64),
        0,
        BEAM_COUNT - 1,
    )
    idx = np.arange(BEAM_COUNT)
    kept_beams = np.floor((idx + 1) * keep_fraction) > np.floor(idx * keep_fraction)
    return kept_beams[beam]


def apply_domain_shift(frame, shift, seed):
    """Return a shifted copy of the frame; identity parameters are no-ops."""
    rng = np.random.default_rng(seed)

    rgb = frame.image.rgb
    if shift.image_gamma != 1.0:
        rgb = np.power(rgb, shift.image_gamma)
    if shift.image_noise_sigma > 0.0:
        rgb = rgb + rng.normal(0.0, shift.image_noise_sigma, size=rgb.shape)
    if shift.image_gamma != 1.0 or shift.image_noise_sigma > 0.0:
        image = CameraImage(rgb=np.clip(rgb, 0.0, 1.0))
    else:
        image = frame.image

    keep = np.ones(frame.points.n, dtype=bool)
    if shift.point_drop_prob > 0.0:
        keep &= rng.random(frame.points.n) >= shift.point_drop_prob
    if shift.beam_keep_fraction < 1.0:
        keep &= _beam_keep_mask(frame.points.positions, shift.beam_keep_fraction)
    if not keep.any():
        raise ValueError("domain shift removed every point")

    positions = frame.points.positions[keep]
    features = frame.points.features[keep]
    if shift.feature_noise_sigma > 0.0:
        features = features + rng.normal(0.0, shift.feature_noise_sigma, size=features.shape)
        features = features.copy()
        features[:, 0] = np.clip(features[:, 0], 0.0, 1.0)

    labels = None
    if frame.labels is not None:
        labels = PanopticLabeling(frame.labels.ids[keep], frame.labels.registry)
    return Frame(
        points=PointCloud(positions=positions, features=features),
        image=image,
        calibration=frame.calibration,
        labels=labels,
        frame_id=frame.frame_id,
    )


# ---------------------------------------------------------------------------
# corrupted 2D proposal oracle
# ---------------------------------------------------------------------------

def make_oracle_proposals(frame, flip_prob=0.1, erosion=1, conf_range=(0.7, 0.95), seed=0):
    """2D thing-instance mask proposals derived from ground truth.

    Each thing instance's visible points are splatted to a silhouette
    (dilate, fill, erode back), the boundary is eroded ``erosion`` more
    iterations, and the label is flipped to another thing class with
    probability ``flip_prob``.  Returns (proposals, (H, W)) where proposals
    are (mask, label, confidence) tuples.  Stand-in for an external 2D
    segmentation model.
    """
    if frame.labels is None:
        raise ValueError("proposal oracle needs ground-truth labels")
    rng = np.random.default_rng(seed)
    reg = frame.labels.registry
    h, w = frame.image.height, frame.image.width
    proj = project_points(frame.points, frame.calibration, (w, h))
    row, col = proj.pixel_indices()

    cls = frame.labels.class_ids()
    inst = frame.labels.instance_ids()
    thing_ids = set(int(t) for t in reg.thing_ids)
    structure = np.ones((3, 3), dtype=bool)

    proposals = []
    for pid in np.unique(frame.labels.ids):
        c, k = int(pid) // PANOPTIC_BASE, int(pid) % PANOPTIC_BASE
        if c not in thing_ids:
            continue
        member = (cls == c) & (inst == k) & proj.valid
        if not member.any():
            continue
        mask = np.zeros((h, w), dtype=bool)
        mask[row[member], col[member]] = True
        mask = ndimage.binary_dilation(mask, structure=structure, iterations=2)
        mask = ndimage.binary_fill_holes(mask)
        mask = ndimage.binary_erosion(mask, structure=structure, iterations=2 + int(erosion))
        if not mask.any():
            continue
        label = c
        if len(thing_ids) > 1 and rng.random() < flip_prob:
            others = sorted(thing_ids - {c})
            label = int(others[rng.integers(len(others))])
        conf = float(rng.uniform(conf_range[0], conf_range[1]))
        proposals.append((mask, label, conf))
    return proposals, (h, w)
