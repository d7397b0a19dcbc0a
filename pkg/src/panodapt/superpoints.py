"""Geometric and visual superpoints.

The geometric route separates the ground plane with RANSAC and clusters the
remaining points by density; the visual route lifts 2D mask proposals
through the camera projection.  Both produce groups of point indices that
later vote on pseudo-label masks.

Neighbor queries run on a uniform hash grid with cell edge equal to the
search radius, scanning the 27 surrounding cells; this keeps the worst case
linear in points times occupancy and the results exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .core import PointCloud, project_points
from .validation import as_bool_mask, as_positions, check_fitted, check_positive


# ---------------------------------------------------------------------------
# radius neighbor search on a uniform hash grid
# ---------------------------------------------------------------------------

_CELL_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
    dtype=np.int64,
)


def _build_cell_map(positions, radius):
    cells = np.floor(positions / radius).astype(np.int64)
    cell_map = {}
    for i, key in enumerate(map(tuple, cells)):
        cell_map.setdefault(key, []).append(i)
    return cells, {k: np.asarray(v, dtype=np.int64) for k, v in cell_map.items()}


def radius_neighbors(positions, radius):
    """Exact neighbor lists within ``radius`` (inclusive, self excluded).

    Returns (neighbor_indices, neighbor_sq_distances) lists, one entry per
    point, each an ndarray.
    """
    positions = as_positions(positions)
    radius = check_positive(radius, "radius")
    cells, cell_map = _build_cell_map(positions, radius)
    r2 = radius * radius
    neighbors = [None] * positions.shape[0]
    distances = [None] * positions.shape[0]
    for key, members in cell_map.items():
        key = np.asarray(key, dtype=np.int64)
        cand = [cell_map.get(tuple(key + off)) for off in _CELL_OFFSETS]
        cand = np.concatenate([c for c in cand if c is not None])
        diff = positions[members][:, None, :] - positions[cand][None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        for local, point in enumerate(members):
            close = d2[local] <= r2
            close[cand == point] = False
            idx = cand[close]
            order = np.argsort(idx, kind="stable")
            neighbors[point] = idx[order]
            distances[point] = d2[local][close][order]
    return neighbors, distances


def neighbor_counts(positions, radius):
    """Number of neighbors within ``radius`` of each point (self excluded)."""
    neighbors, _ = radius_neighbors(positions, radius)
    return np.array([len(n) for n in neighbors], dtype=np.int64)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

class GroundPlaneSegmenter(BaseEstimator):
    """RANSAC plane fit for ground separation.

    Samples point triples, keeps the plane with the largest inlier support
    (|distance| <= inlier_threshold, ties to the earliest iteration), refits
    by least squares on the support set and re-collects inliers against the
    refit plane.  The stored normal points along +z.

    Parameters
    ----------
    iterations : int, number of RANSAC triples to draw.
    inlier_threshold : float, max point-to-plane distance for an inlier (m).
    random_state : int, seed for the sampling.

    Attributes
    ----------
    plane_ : ndarray (4,), unit-normal plane (a, b, c, d) with a*x+b*y+c*z+d=0.
    inlier_mask_ : ndarray (N,) bool, final inliers of the fitted plane.
    """

    def __init__(self, iterations=256, inlier_threshold=0.15, random_state=0):
        self.iterations = iterations
        self.inlier_threshold = inlier_threshold
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_positions(X, "X")
        if X.shape[0] < 3:
            raise ValueError("plane fitting needs at least 3 points")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        threshold = check_positive(self.inlier_threshold, "inlier_threshold")
        rng = np.random.default_rng(self.random_state)

        n = X.shape[0]
        triples = rng.integers(0, n, size=(int(self.iterations), 3))
        a, b, c = X[triples[:, 0]], X[triples[:, 1]], X[triples[:, 2]]
        normals = np.cross(b - a, c - a)
        norms = np.linalg.norm(normals, axis=1)
        ok = norms > 1e-12
        if not ok.any():
            raise ValueError("degenerate geometry: every sampled triple was collinear")
        normals[ok] /= norms[ok, None]
        # distance of every point to every candidate plane
        support = np.zeros(triples.shape[0], dtype=np.int64)
        dist = np.abs((X @ normals[ok].T) - np.einsum("ij,ij->i", a[ok], normals[ok]))
        support[ok] = (dist <= threshold).sum(axis=0)
        best = int(np.argmax(support))
        if support[best] < 3:
            raise ValueError("degenerate geometry: no plane gathered 3 inliers")

        inliers = np.abs((X - a[best]) @ normals[best]) <= threshold
        centroid = X[inliers].mean(axis=0)
        _, _, vt = np.linalg.svd(X[inliers] - centroid, full_matrices=False)
        normal = vt[-1]
        if normal[2] < 0:
            normal = -normal
        d = -float(normal @ centroid)

        self.plane_ = np.concatenate([normal, [d]])
        self.inlier_mask_ = np.abs(X @ normal + d) <= threshold
        return self

    def predict(self, X):
        check_fitted(self, "plane_")
        X = as_positions(X, "X")
        return np.abs(X @ self.plane_[:3] + self.plane_[3]) <= self.inlier_threshold


class DensityClusterer(BaseEstimator, ClusterMixin):
    """Density clustering (DBSCAN) with deterministic tie-breaking.

    A point is core iff its eps-neighborhood (itself included) holds at
    least ``min_pts`` points.  Clusters are connected components of core
    points under eps-reachability; border points join the cluster of their
    nearest core neighbor (ties to the lowest point index).  Noise points
    get label -1.  Results depend only on the point order, not on chance.

    Parameters
    ----------
    eps : float, neighborhood radius (inclusive).
    min_pts : int, minimum neighborhood size for a core point.

    Attributes
    ----------
    labels_ : ndarray (N,) int, cluster id per point or -1 for noise.
    core_mask_ : ndarray (N,) bool, core points.
    """

    def __init__(self, eps=0.5, min_pts=10):
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, X, y=None):
        X = as_positions(X, "X")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        n = X.shape[0]
        neighbors, distances = radius_neighbors(X, self.eps)
        counts = np.array([len(nb) for nb in neighbors]) + 1  # self included
        core = counts >= int(self.min_pts)

        labels = np.full(n, -1, dtype=np.int64)
        next_label = 0
        for start in range(n):
            if not core[start] or labels[start] != -1:
                continue
            labels[start] = next_label
            stack = [start]
            while stack:
                p = stack.pop()
                for q in neighbors[p]:
                    if core[q] and labels[q] == -1:
                        labels[q] = next_label
                        stack.append(q)
            next_label += 1

        # border points: nearest core neighbor, ties to lowest index
        for p in range(n):
            if core[p] or len(neighbors[p]) == 0:
                continue
            nb = neighbors[p]
            nb_core = core[nb]
            if not nb_core.any():
                continue
            cand = nb[nb_core]
            d2 = distances[p][nb_core]
            best = cand[np.argmin(d2)]  # argmin returns first min; cand sorted by index
            labels[p] = labels[best]

        self.labels_ = labels
        self.core_mask_ = core
        return self


# ---------------------------------------------------------------------------
# superpoint containers and pipeline functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometricSuperpoints:
    """Ground mask plus non-ground clusters, all over the full cloud.

    ``masks()`` yields clusters first and the ground mask last, matching the
    order used when stuff masks pick a grow candidate.
    """

    ground: np.ndarray
    clusters: tuple
    n_points: int

    def __len__(self):
        return len(self.clusters) + (1 if self.ground.any() else 0)

    def masks(self):
        out = []
        for idx in self.clusters:
            mask = np.zeros(self.n_points, dtype=bool)
            mask[idx] = True
            out.append(mask)
        if self.ground.any():
            out.append(self.ground.copy())
        return out


@dataclass(frozen=True)
class VisualSuperpoints:
    """Lifted 2D proposals: per-superpoint point indices, labels, confidences."""

    point_indices: tuple
    labels: np.ndarray
    confidences: np.ndarray
    n_points: int

    def __len__(self):
        return len(self.point_indices)

    def mask(self, i):
        out = np.zeros(self.n_points, dtype=bool)
        out[self.point_indices[i]] = True
        return out


def segment_ground(points, iterations=256, inlier_threshold=0.15, seed=0):
    """Convenience wrapper returning (plane, ground_mask)."""
    pos = points.positions if isinstance(points, PointCloud) else points
    est = GroundPlaneSegmenter(
        iterations=iterations, inlier_threshold=inlier_threshold, random_state=seed
    ).fit(pos)
    return est.plane_, est.inlier_mask_


def cluster_nonground(points, nonground_mask, eps=0.5, min_pts=10):
    """Cluster the non-ground subset; returns GeometricSuperpoints."""
    pos = points.positions if isinstance(points, PointCloud) else as_positions(points)
    nonground_mask = as_bool_mask(nonground_mask, pos.shape[0], "nonground_mask")
    subset = np.nonzero(nonground_mask)[0]
    clusters = []
    if subset.size:
        labels = DensityClusterer(eps=eps, min_pts=min_pts).fit(pos[subset]).labels_
        for lab in range(labels.max() + 1 if labels.size else 0):
            clusters.append(subset[labels == lab])
    return GeometricSuperpoints(
        ground=~nonground_mask, clusters=tuple(clusters), n_points=pos.shape[0]
    )


def extract_geometric_superpoints(
    points, ransac_iterations=256, ransac_threshold=0.15, eps=0.5, min_pts=10, seed=0
):
    """Ground separation followed by density clustering of the rest."""
    plane, ground = segment_ground(points, ransac_iterations, ransac_threshold, seed)
    sp = cluster_nonground(points, ~ground, eps=eps, min_pts=min_pts)
    return plane, sp


def lift_visual_masks(proposals, frame, min_points=5):
    """Lift (mask, label, confidence) 2D proposals onto the point cloud.

    A point joins a lifted mask iff its projection is valid and its rounded
    pixel lies inside the 2D mask.  Lifted masks smaller than ``min_points``
    are discarded.
    """
    h, w = frame.image.height, frame.image.width
    proj = project_points(frame.points, frame.calibration, (w, h))
    row, col = proj.pixel_indices()
    valid = np.nonzero(proj.valid)[0]

    indices, labels, confs = [], [], []
    for mask2d, label, conf in proposals:
        mask2d = np.asarray(mask2d, dtype=bool)
        if mask2d.shape != (h, w):
            raise ValueError(f"proposal mask shape {mask2d.shape} != image {(h, w)}")
        member = valid[mask2d[row[valid], col[valid]]]
        if member.size < min_points:
            continue
        indices.append(member)
        labels.append(int(label))
        confs.append(float(conf))
    return VisualSuperpoints(
        point_indices=tuple(indices),
        labels=np.asarray(labels, dtype=np.int64),
        confidences=np.asarray(confs, dtype=np.float64),
        n_points=frame.points.n,
    )
