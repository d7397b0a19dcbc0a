"""Pseudo-label initiation and refinement.

A teacher prediction (segments with class confidences plus per-point
confidences) is turned into training targets in stages: joint confidence,
instance filtering for things, per-class adaptive thresholds for stuff,
mask growth onto geometric superpoints, conflict resolution and class
reassignment against lifted visual superpoints.  Points covered by no final
mask get loss weight 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .core import PanopticLabeling, encode_panoptic, mask_iou
from .validation import check_probability


@dataclass(frozen=True)
class PredictionSet:
    """Segments of one predicted frame.

    classes : (K,) class id per segment
    class_conf : (K,) segment-level confidence in [0, 1]
    masks : (K, N) boolean membership; disjoint when freshly predicted
    point_conf : (N,) per-point confidence in [0, 1]
    """

    classes: np.ndarray
    class_conf: np.ndarray
    masks: np.ndarray
    point_conf: np.ndarray
    registry: object

    def __post_init__(self):
        classes = np.asarray(self.classes, dtype=np.int64)
        conf = np.asarray(self.class_conf, dtype=np.float64)
        masks = np.asarray(self.masks)
        point_conf = np.asarray(self.point_conf, dtype=np.float64)
        if masks.dtype != np.bool_ or masks.ndim != 2:
            raise ValueError("masks must be a (K, N) boolean array")
        k = classes.shape[0]
        if conf.shape != (k,) or masks.shape[0] != k:
            raise ValueError("segment arrays disagree on K")
        if point_conf.shape != (masks.shape[1],):
            raise ValueError("point_conf must have one entry per point")
        for arr, name in ((conf, "class_conf"), (point_conf, "point_conf")):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        for c in classes:
            self.registry.get(int(c))
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "class_conf", conf)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "point_conf", point_conf)

    @property
    def n_segments(self):
        return self.classes.shape[0]

    @property
    def n_points(self):
        return self.masks.shape[1] if self.masks.ndim == 2 else self.point_conf.shape[0]

    def thing_flags(self):
        return np.array([self.registry.is_thing(int(c)) for c in self.classes], dtype=bool)

    def assignment(self):
        """Per-point owning segment index (first mask wins), -1 if uncovered."""
        assign = np.full(self.n_points, -1, dtype=np.int64)
        for k in range(self.n_segments):
            free = self.masks[k] & (assign == -1)
            assign[free] = k
        return assign

    def replace(self, **kwargs):
        data = {
            "classes": self.classes,
            "class_conf": self.class_conf,
            "masks": self.masks,
            "point_conf": self.point_conf,
            "registry": self.registry,
        }
        data.update(kwargs)
        return PredictionSet(**data)


@dataclass(frozen=True)
class PseudoLabelSet:
    """Refined training targets: final masks, classes and point weights."""

    classes: np.ndarray
    masks: np.ndarray
    weights: np.ndarray
    scores: np.ndarray  # min-max normalized segment confidences
    registry: object

    @property
    def n_segments(self):
        return self.classes.shape[0]

    def to_labeling(self):
        """Encode as panoptic ids; thing instances are numbered in segment order."""
        ids = np.zeros(self.masks.shape[1] if self.masks.ndim == 2 else self.weights.shape[0],
                       dtype=np.int64)
        instance = 0
        for k in range(self.n_segments):
            cls = int(self.classes[k])
            if self.registry.is_thing(cls):
                instance += 1
                ids[self.masks[k]] = encode_panoptic(cls, instance)
            else:
                ids[self.masks[k]] = encode_panoptic(cls, 0)
        return PanopticLabeling(ids, self.registry)

    def class_targets(self):
        """(model_index_targets, weights) for point-wise classification."""
        n = self.weights.shape[0]
        targets = np.zeros(n, dtype=np.int64)
        for k in range(self.n_segments):
            targets[self.masks[k]] = self.registry.model_index(int(self.classes[k]))
        return targets, self.weights.astype(np.float64)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def joint_confidence(pred):
    """S(p) = class confidence of p's segment times p's point confidence."""
    assign = pred.assignment()
    joint = np.zeros(pred.n_points, dtype=np.float64)
    covered = assign >= 0
    joint[covered] = pred.class_conf[assign[covered]] * pred.point_conf[covered]
    return joint


def segment_mean_confidence(pred, joint):
    """Mean joint confidence per segment; empty segments score 0."""
    out = np.zeros(pred.n_segments, dtype=np.float64)
    for k in range(pred.n_segments):
        if pred.masks[k].any():
            out[k] = float(joint[pred.masks[k]].mean())
    return out


def filter_things(pred, seg_mean, threshold):
    """Zero every thing mask whose mean confidence is below the threshold."""
    masks = pred.masks.copy()
    thing = pred.thing_flags()
    for k in range(pred.n_segments):
        if thing[k] and seg_mean[k] < threshold:
            masks[k] = False
    return pred.replace(masks=masks)


def stuff_thresholds(pred, joint, keep_fraction):
    """Per-class confidence thresholds keeping the top ``keep_fraction`` points.

    For each stuff class the threshold is the score of the m-th best point,
    m = ceil(keep_fraction * n), over points currently labeled with that
    class; classes without points get threshold 1.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    thing = pred.thing_flags()
    out = {}
    for cls in pred.registry.stuff_ids:
        cls = int(cls)
        member = np.zeros(pred.n_points, dtype=bool)
        for k in range(pred.n_segments):
            if not thing[k] and int(pred.classes[k]) == cls:
                member |= pred.masks[k]
        scores = joint[member]
        if scores.size == 0:
            out[cls] = 1.0
            continue
        m = int(np.ceil(keep_fraction * scores.size))
        out[cls] = float(np.sort(scores)[scores.size - m])
    return out


def filter_stuff(pred, joint, thresholds):
    """Point-wise filtering of stuff masks by the per-class thresholds."""
    masks = pred.masks.copy()
    thing = pred.thing_flags()
    for k in range(pred.n_segments):
        if not thing[k]:
            masks[k] &= joint >= thresholds[int(pred.classes[k])]
    return pred.replace(masks=masks)


def drop_empty_segments(pred, seg_mean):
    """Remove segments whose mask emptied out; keeps seg_mean aligned."""
    keep = np.array([pred.masks[k].any() for k in range(pred.n_segments)], dtype=bool)
    out = pred.replace(
        classes=pred.classes[keep],
        class_conf=pred.class_conf[keep],
        masks=pred.masks[keep],
    )
    return out, np.asarray(seg_mean, dtype=np.float64)[keep]


def grow_stuff_masks(pred, geo, iou_min=0.5):
    """Union each stuff mask with its best-overlapping geometric superpoint.

    The candidate list holds the density clusters first and the ground mask
    last; the best candidate by IoU (ties to the lower index) is merged iff
    its IoU reaches ``iou_min``.
    """
    candidates = geo.masks()
    if not candidates:
        return pred
    masks = pred.masks.copy()
    thing = pred.thing_flags()
    for k in range(pred.n_segments):
        if thing[k] or not masks[k].any():
            continue
        ious = np.array([mask_iou(masks[k], g) for g in candidates])
        best = int(np.argmax(ious))
        if ious[best] >= iou_min:
            masks[k] |= candidates[best]
    return pred.replace(masks=masks)


def resolve_mask_conflicts(pred, seg_mean):
    """Make masks disjoint again after growth.

    Priority per point: stuff beats thing; within a kind the higher mean
    confidence wins, ties to the lower segment index.
    """
    thing = pred.thing_flags()
    order = sorted(
        range(pred.n_segments),
        key=lambda k: (bool(thing[k]), -float(seg_mean[k]), k),
    )
    owner = np.full(pred.n_points, -1, dtype=np.int64)
    for k in order:
        free = pred.masks[k] & (owner == -1)
        owner[free] = k
    masks = np.zeros_like(pred.masks)
    for k in range(pred.n_segments):
        masks[k] = owner == k
    return pred.replace(masks=masks)


def normalize_scores(seg_mean):
    """Min-max normalize; a constant vector maps to all ones."""
    seg_mean = np.asarray(seg_mean, dtype=np.float64)
    if seg_mean.size == 0:
        return seg_mean.copy()
    lo, hi = float(seg_mean.min()), float(seg_mean.max())
    if hi == lo:
        return np.ones_like(seg_mean)
    return (seg_mean - lo) / (hi - lo)


def reassign_classes(pred, vis, scores_norm, bound=0.2, iou_min=0.5):
    """Swap thing classes toward confident visual superpoints.

    For each thing segment the best visual superpoint by IoU (>= iou_min)
    is consulted; the class is replaced iff the segment's normalized score
    is below min(superpoint confidence, bound).
    """
    classes = pred.classes.copy()
    if len(vis) == 0:
        return classes
    thing = pred.thing_flags()
    vis_masks = [vis.mask(i) for i in range(len(vis))]
    for k in range(pred.n_segments):
        if not thing[k] or not pred.masks[k].any():
            continue
        ious = np.array([mask_iou(pred.masks[k], m) for m in vis_masks])
        best = int(np.argmax(ious))
        if ious[best] < iou_min:
            continue
        if scores_norm[k] < min(float(vis.confidences[best]), bound):
            classes[k] = int(vis.labels[best])
    return classes


class PseudoLabelRefiner(BaseEstimator):
    """Composes the refinement stages into one operator.

    Parameters
    ----------
    thing_conf_threshold : float, minimum mean joint confidence for thing
        segments to survive.
    stuff_keep_fraction : float, fraction of stuff points kept per class by
        the adaptive threshold.
    reassign_bound : float, upper bound on the normalized segment score for
        class reassignment.
    iou_min : float, minimum overlap for both mask growth and reassignment.
    """

    def __init__(self, thing_conf_threshold=0.63, stuff_keep_fraction=0.8,
                 reassign_bound=0.2, iou_min=0.5):
        self.thing_conf_threshold = thing_conf_threshold
        self.stuff_keep_fraction = stuff_keep_fraction
        self.reassign_bound = reassign_bound
        self.iou_min = iou_min

    def refine(self, pred, geo, vis):
        """Run all stages; returns a PseudoLabelSet."""
        check_probability(self.thing_conf_threshold, "thing_conf_threshold")
        check_probability(self.reassign_bound, "reassign_bound")
        joint = joint_confidence(pred)
        seg_mean = segment_mean_confidence(pred, joint)

        cur = filter_things(pred, seg_mean, self.thing_conf_threshold)
        taus = stuff_thresholds(cur, joint, self.stuff_keep_fraction)
        cur = filter_stuff(cur, joint, taus)
        cur, seg_mean = drop_empty_segments(cur, seg_mean)

        cur = grow_stuff_masks(cur, geo, self.iou_min)
        cur = resolve_mask_conflicts(cur, seg_mean)
        cur, seg_mean = drop_empty_segments(cur, seg_mean)

        scores = normalize_scores(seg_mean)
        classes = reassign_classes(cur, vis, scores, self.reassign_bound, self.iou_min)

        weights = cur.masks.any(axis=0).astype(np.float64) if cur.n_segments else np.zeros(
            pred.n_points, dtype=np.float64
        )
        return PseudoLabelSet(
            classes=classes,
            masks=cur.masks,
            weights=weights,
            scores=scores,
            registry=pred.registry,
        )
