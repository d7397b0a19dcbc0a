"""Panoptic quality and semantic IoU.

Segments are groups of equal panoptic ids.  Points whose ground-truth class
is the ignore id are removed before any IoU is computed.  A (pred, gt) pair
of the same class is a true positive iff its IoU is strictly above 0.5,
which makes the matching unique.  Per-frame results accumulate additively,
so dataset-level reports do not depend on frame order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import IGNORE_ID, PANOPTIC_BASE, PanopticLabeling

MATCH_IOU = 0.5


def _as_ids(labeling):
    if isinstance(labeling, PanopticLabeling):
        return labeling.ids
    return np.asarray(labeling, dtype=np.int64)


@dataclass
class ClassMatchStats:
    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, other):
        self.iou_sum += other.iou_sum
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn


@dataclass
class SegmentMatches:
    """Outcome of matching one frame."""

    per_class: dict
    pairs: list  # (pred_id, gt_id, iou)
    unmatched_pred: list
    unmatched_gt: list


def match_segments(pred, gt, registry=None):
    """Match predicted against ground-truth segments within each class."""
    pred_ids = _as_ids(pred)
    gt_ids = _as_ids(gt)
    if pred_ids.shape != gt_ids.shape:
        raise ValueError("prediction and ground truth must cover the same points")
    if registry is None:
        if not isinstance(gt, PanopticLabeling):
            raise ValueError("a registry is required when passing raw id arrays")
        registry = gt.registry

    keep = (gt_ids // PANOPTIC_BASE) != IGNORE_ID
    pred_ids = pred_ids[keep]
    gt_ids = gt_ids[keep]

    def segment_sizes(ids):
        values, counts = np.unique(ids, return_counts=True)
        real = (values // PANOPTIC_BASE) != IGNORE_ID
        return dict(zip(values[real].tolist(), counts[real].tolist()))

    pred_sizes = segment_sizes(pred_ids)
    gt_sizes = segment_sizes(gt_ids)

    key = gt_ids * (10 ** 7) + pred_ids
    values, counts = np.unique(key, return_counts=True)
    inter_gt = values // (10 ** 7)
    inter_pred = values % (10 ** 7)

    per_class = {int(c): ClassMatchStats() for c in registry.class_ids}
    pairs = []
    matched_pred, matched_gt = set(), set()
    for g, p, inter in zip(inter_gt.tolist(), inter_pred.tolist(), counts.tolist()):
        if g // PANOPTIC_BASE == IGNORE_ID or p // PANOPTIC_BASE == IGNORE_ID:
            continue
        if g // PANOPTIC_BASE != p // PANOPTIC_BASE:
            continue
        iou = inter / (pred_sizes[p] + gt_sizes[g] - inter)
        if iou > MATCH_IOU:
            if g in matched_gt or p in matched_pred:
                raise AssertionError("IoU > 0.5 matching produced a duplicate partner")
            matched_gt.add(g)
            matched_pred.add(p)
            pairs.append((p, g, iou))
            stats = per_class[g // PANOPTIC_BASE]
            stats.tp += 1
            stats.iou_sum += iou

    unmatched_pred = sorted(p for p in pred_sizes if p not in matched_pred)
    unmatched_gt = sorted(g for g in gt_sizes if g not in matched_gt)
    for p in unmatched_pred:
        cls = p // PANOPTIC_BASE
        if cls in per_class:
            per_class[cls].fp += 1
    for g in unmatched_gt:
        per_class[g // PANOPTIC_BASE].fn += 1
    return SegmentMatches(
        per_class=per_class,
        pairs=pairs,
        unmatched_pred=unmatched_pred,
        unmatched_gt=unmatched_gt,
    )


# ---------------------------------------------------------------------------
# quality numbers
# ---------------------------------------------------------------------------

@dataclass
class ClassReport:
    pq: float
    sq: float
    rq: float
    iou: float
    tp: int
    fp: int
    fn: int
    present: bool


@dataclass
class PanopticReport:
    pq: float
    sq: float
    rq: float
    pq_things: float
    pq_stuff: float
    miou: float
    per_class: dict  # class id -> ClassReport

    def to_key_values(self, registry):
        lines = [
            f"PQ={self.pq!r}",
            f"SQ={self.sq!r}",
            f"RQ={self.rq!r}",
            f"PQ_th={self.pq_things!r}",
            f"PQ_st={self.pq_stuff!r}",
            f"mIoU={self.miou!r}",
        ]
        for cls_id, row in sorted(self.per_class.items()):
            name = registry.get(cls_id).name
            lines += [
                f"class.{name}.PQ={row.pq!r}",
                f"class.{name}.SQ={row.sq!r}",
                f"class.{name}.RQ={row.rq!r}",
                f"class.{name}.IoU={row.iou!r}",
                f"class.{name}.TP={row.tp}",
                f"class.{name}.FP={row.fp}",
                f"class.{name}.FN={row.fn}",
            ]
        return lines

    def format_table(self, registry):
        head = f"{'class':<12} {'kind':<6} {'PQ':>8} {'SQ':>8} {'RQ':>8} {'IoU':>8} {'TP':>4} {'FP':>4} {'FN':>4}"
        rows = [head, "-" * len(head)]
        for cls_id, row in sorted(self.per_class.items()):
            spec = registry.get(cls_id)
            kind = "thing" if spec.thing else "stuff"
            mark = "" if row.present else "  (absent)"
            rows.append(
                f"{spec.name:<12} {kind:<6} {row.pq:>8.4f} {row.sq:>8.4f} "
                f"{row.rq:>8.4f} {row.iou:>8.4f} {row.tp:>4} {row.fp:>4} {row.fn:>4}{mark}"
            )
        rows.append("-" * len(head))
        rows.append(
            f"{'ALL':<12} {'':<6} PQ={self.pq:.4f} SQ={self.sq:.4f} RQ={self.rq:.4f} "
            f"PQ_th={self.pq_things:.4f} PQ_st={self.pq_stuff:.4f} mIoU={self.miou:.4f}"
        )
        return "\n".join(rows)


def _class_quality(stats):
    tp, fp, fn = stats.tp, stats.fp, stats.fn
    if tp == 0:
        rq = 0.0
        sq = 0.0
    else:
        sq = stats.iou_sum / tp
        rq = tp / (tp + 0.5 * fp + 0.5 * fn)
    return sq * rq, sq, rq


def panoptic_quality(per_class_stats, registry, confusion=None):
    """Aggregate per-class match statistics into a PanopticReport.

    Classes with no gt and no pred segments are excluded from the averages;
    PQ_th and PQ_st average over the included thing/stuff classes only.
    ``confusion`` optionally supplies per-class (tp, fp, fn) point counts
    for the semantic mIoU column.
    """
    per_class = {}
    pq_all, pq_th, pq_st = [], [], []
    sq_all, rq_all, ious = [], [], []
    for cls in registry.class_ids:
        cls = int(cls)
        stats = per_class_stats.get(cls, ClassMatchStats())
        present = (stats.tp + stats.fp + stats.fn) > 0
        pq, sq, rq = _class_quality(stats)
        iou = 0.0
        if confusion is not None and cls in confusion:
            tp_pts, fp_pts, fn_pts = confusion[cls]
            denom = tp_pts + fp_pts + fn_pts
            if denom > 0:
                iou = tp_pts / denom
                ious.append(iou)
        per_class[cls] = ClassReport(
            pq=pq, sq=sq, rq=rq, iou=iou,
            tp=stats.tp, fp=stats.fp, fn=stats.fn,
            present=present,
        )
        if present:
            pq_all.append(pq)
            sq_all.append(sq)
            rq_all.append(rq)
            (pq_th if registry.is_thing(cls) else pq_st).append(pq)

    def mean(values):
        return float(np.mean(values)) if values else 0.0

    sq_mean = mean(sq_all)
    rq_mean = mean(rq_all)
    return PanopticReport(
        pq=mean(pq_all),
        sq=sq_mean,
        rq=rq_mean,
        pq_things=mean(pq_th),
        pq_stuff=mean(pq_st),
        miou=mean(ious),
        per_class=per_class,
    )


def semantic_confusion(pred_classes, gt_classes, registry):
    """Per-class (tp, fp, fn) point counts, gt-ignore points excluded."""
    pred_classes = np.asarray(pred_classes, dtype=np.int64)
    gt_classes = np.asarray(gt_classes, dtype=np.int64)
    keep = gt_classes != IGNORE_ID
    pred_classes = pred_classes[keep]
    gt_classes = gt_classes[keep]
    out = {}
    for cls in registry.class_ids:
        cls = int(cls)
        is_pred = pred_classes == cls
        is_gt = gt_classes == cls
        out[cls] = (
            int(np.count_nonzero(is_pred & is_gt)),
            int(np.count_nonzero(is_pred & ~is_gt)),
            int(np.count_nonzero(~is_pred & is_gt)),
        )
    return out


def mean_iou(pred, gt, registry=None):
    """Mean class IoU of the semantic part of two labelings.

    Classes absent from both prediction and ground truth are skipped.
    """
    pred_ids = _as_ids(pred)
    gt_ids = _as_ids(gt)
    if registry is None:
        if not isinstance(gt, PanopticLabeling):
            raise ValueError("a registry is required when passing raw id arrays")
        registry = gt.registry
    confusion = semantic_confusion(pred_ids // PANOPTIC_BASE, gt_ids // PANOPTIC_BASE, registry)
    ious = [tp / (tp + fp + fn) for tp, fp, fn in confusion.values() if tp + fp + fn > 0]
    return float(np.mean(ious)) if ious else 0.0


class PanopticEvaluator:
    """Accumulates matches and confusion counts over many frames."""

    def __init__(self, registry):
        self.registry = registry
        self._stats = {int(c): ClassMatchStats() for c in registry.class_ids}
        self._confusion = {int(c): [0, 0, 0] for c in registry.class_ids}

    def update(self, pred, gt):
        matches = match_segments(pred, gt, self.registry)
        for cls, stats in matches.per_class.items():
            self._stats[cls].add(stats)
        pred_ids = _as_ids(pred)
        gt_ids = _as_ids(gt)
        frame_conf = semantic_confusion(
            pred_ids // PANOPTIC_BASE, gt_ids // PANOPTIC_BASE, self.registry
        )
        for cls, (tp, fp, fn) in frame_conf.items():
            acc = self._confusion[cls]
            acc[0] += tp
            acc[1] += fp
            acc[2] += fn
        return matches

    def report(self):
        confusion = {c: tuple(v) for c, v in self._confusion.items()}
        return panoptic_quality(self._stats, self.registry, confusion=confusion)
