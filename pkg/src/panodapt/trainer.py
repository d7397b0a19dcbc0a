"""Mean-teacher adaptation between a labeled and an unlabeled domain.

A student network trains on labeled source frames and, during adaptation, on
refined pseudo-labels for target frames.  The teacher is an exponential
moving average of the student and only ever sees clean target inputs, while
the student sees modality-dropped ones.  One adaptation step combines one
source and one target frame and sums four loss terms: source segmentation,
source pixel head, target segmentation on pseudo-labels, and per-point
feature consistency against the teacher.
"""

from __future__ import annotations

import csv

import numpy as np
from sklearn.base import BaseEstimator

from .core import encode_panoptic, project_points
from .metrics import PanopticEvaluator
from .modaldrop import DropRatios, apply_modal_dropout, prepare_drop_regions
from .model import (
    DENSITY_RADIUS,
    ModelShape,
    aux_term,
    consistency_term,
    ema_update,
    extract_features,
    forward,
    init_parameters,
    seg_term,
    supervised_pixel_indices,
)
from .pseudolabel import PredictionSet, PseudoLabelRefiner
from .superpoints import (
    DensityClusterer,
    VisualSuperpoints,
    extract_geometric_superpoints,
    lift_visual_masks,
    neighbor_counts,
)
from .validation import check_fitted

LR_MILESTONES = (1.0 / 3.0, 1.0 / 2.0, 2.0 / 3.0)

TRAJECTORY_FIELDS = (
    "iteration",
    "pq",
    "pq_things",
    "pq_stuff",
    "miou",
    "loss_seg_source",
    "loss_aux_source",
    "loss_seg_target",
    "loss_consistency",
)


def learning_rate(base, iteration, total):
    """Step schedule: the base rate is halved at 1/3, 1/2 and 2/3 of a phase."""
    if total <= 0:
        return float(base)
    progress = iteration / total
    return float(base) * 0.5 ** sum(progress >= m for m in LR_MILESTONES)


def derive_instances(probs, positions, registry, eps=0.5, min_pts=10):
    """Segment argmax predictions into a PredictionSet.

    Each stuff class present contributes one segment; thing classes are
    density-clustered and each cluster becomes a segment (noise points end up
    uncovered).  Segments are ordered by registry class, clusters by label,
    so lower-index tie-breaks downstream are deterministic.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    point_conf = probs.max(axis=1)
    pred_cls = registry.class_ids[probs.argmax(axis=1)]

    classes, masks = [], []
    for cls in registry.class_ids:
        cls = int(cls)
        sel = pred_cls == cls
        if not sel.any():
            continue
        if not registry.is_thing(cls):
            classes.append(cls)
            masks.append(sel)
            continue
        idx = np.nonzero(sel)[0]
        labels = DensityClusterer(eps=eps, min_pts=min_pts).fit(positions[idx]).labels_
        for lab in range(labels.max() + 1):
            mask = np.zeros(n, dtype=bool)
            mask[idx[labels == lab]] = True
            classes.append(cls)
            masks.append(mask)

    masks = np.array(masks, dtype=bool) if masks else np.zeros((0, n), dtype=bool)
    class_conf = np.array([point_conf[m].mean() for m in masks], dtype=np.float64)
    return PredictionSet(
        classes=np.asarray(classes, dtype=np.int64),
        class_conf=class_conf,
        masks=masks,
        point_conf=point_conf,
        registry=registry,
    )


def prediction_to_ids(pred):
    """Panoptic ids from a PredictionSet; uncovered points get the ignore id."""
    ids = np.zeros(pred.n_points, dtype=np.int64)
    instance = 0
    for k in range(pred.n_segments):
        cls = int(pred.classes[k])
        if pred.registry.is_thing(cls):
            instance += 1
            ids[pred.masks[k]] = encode_panoptic(cls, instance)
        else:
            ids[pred.masks[k]] = encode_panoptic(cls, 0)
    return ids


def write_trajectory(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if k != "iteration" else row[k] for k in TRAJECTORY_FIELDS})


def read_trajectory(path):
    rows = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            row = {"iteration": int(record["iteration"])}
            for key in TRAJECTORY_FIELDS[1:]:
                row[key] = float(record[key])
            rows.append(row)
    return rows


class DomainAdapter(BaseEstimator):
    """Fits a student/teacher pair on a labeled source and unlabeled target.

    Parameters
    ----------
    hidden_units : width of the point classifier's hidden layer.
    learning_rate : base SGD rate, halved at 1/3, 1/2 and 2/3 of each phase.
    ema_momentum : teacher decay per adaptation step.
    pretrain_iterations : source-only steps before adaptation starts.
    adapt_iterations : combined source+target steps.
    eval_interval : evaluate on ``eval_frames`` every this many adaptation
        steps (0 disables the trajectory).
    use_modal_dropout : mask one modality of every student input.
    use_refinement : refine teacher predictions into pseudo-labels; when off
        the raw teacher argmax supervises every target point.
    cluster_eps, cluster_min_pts : density clustering for geometric
        superpoints and for instance extraction from predictions.
    ransac_iterations, ransac_threshold : ground plane fit.
    thing_conf_threshold, stuff_keep_fraction, reassign_bound, overlap_min :
        pseudo-label refinement (see PseudoLabelRefiner).
    min_mask_points : smallest lifted visual superpoint kept.
    drop_ratios : DropRatios instance; None selects the defaults.
    seed : master seed for parameter init and dropout draws.
    """

    def __init__(
        self,
        hidden_units=16,
        learning_rate=0.0004,
        ema_momentum=0.99,
        pretrain_iterations=500,
        adapt_iterations=1000,
        eval_interval=0,
        use_modal_dropout=True,
        use_refinement=True,
        cluster_eps=0.5,
        cluster_min_pts=10,
        ransac_iterations=256,
        ransac_threshold=0.15,
        thing_conf_threshold=0.63,
        stuff_keep_fraction=0.8,
        reassign_bound=0.2,
        overlap_min=0.5,
        min_mask_points=5,
        drop_ratios=None,
        seed=0,
    ):
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.ema_momentum = ema_momentum
        self.pretrain_iterations = pretrain_iterations
        self.adapt_iterations = adapt_iterations
        self.eval_interval = eval_interval
        self.use_modal_dropout = use_modal_dropout
        self.use_refinement = use_refinement
        self.cluster_eps = cluster_eps
        self.cluster_min_pts = cluster_min_pts
        self.ransac_iterations = ransac_iterations
        self.ransac_threshold = ransac_threshold
        self.thing_conf_threshold = thing_conf_threshold
        self.stuff_keep_fraction = stuff_keep_fraction
        self.reassign_bound = reassign_bound
        self.overlap_min = overlap_min
        self.min_mask_points = min_mask_points
        self.drop_ratios = drop_ratios
        self.seed = seed

    # -- preparation -------------------------------------------------------

    def _prepare_source(self, frame, ratios, registry):
        if frame.labels is None:
            raise ValueError("source frames need ground-truth labels")
        density = neighbor_counts(frame.points.positions, DENSITY_RADIUS)
        projection = project_points(
            frame.points, frame.calibration, (frame.image.width, frame.image.height)
        )
        rows, cols, pixel_cls = supervised_pixel_indices(frame, projection)
        return {
            "frame": frame,
            "density": density,
            "projection": projection,
            "regions": prepare_drop_regions(frame, ratios) if self.use_modal_dropout else None,
            "targets": registry.model_indices(frame.labels.class_ids()),
            "weights": np.ones(frame.points.n, dtype=np.float64),
            "pixel_rows": rows,
            "pixel_cols": cols,
            "pixel_targets": registry.model_indices(pixel_cls),
        }

    def _prepare_target(self, frame, proposals, ratios):
        density = neighbor_counts(frame.points.positions, DENSITY_RADIUS)
        projection = project_points(
            frame.points, frame.calibration, (frame.image.width, frame.image.height)
        )
        _, geo = extract_geometric_superpoints(
            frame.points,
            ransac_iterations=self.ransac_iterations,
            ransac_threshold=self.ransac_threshold,
            eps=self.cluster_eps,
            min_pts=self.cluster_min_pts,
            seed=self.seed,
        )
        if proposals:
            vis = lift_visual_masks(proposals, frame, self.min_mask_points)
        else:
            vis = VisualSuperpoints(
                point_indices=(),
                labels=np.zeros(0, dtype=np.int64),
                confidences=np.zeros(0, dtype=np.float64),
                n_points=frame.points.n,
            )
        return {
            "frame": frame,
            "density": density,
            "projection": projection,
            "regions": prepare_drop_regions(frame, ratios) if self.use_modal_dropout else None,
            "clean_features": extract_features(frame, density, projection),
            "geo": geo,
            "vis": vis,
        }

    def _student_input(self, entry, ratios, rng):
        if not self.use_modal_dropout:
            return entry["frame"]
        seed = int(rng.integers(0, 2**32))
        mutated, _ = apply_modal_dropout(
            entry["frame"], ratios, seed=seed, regions=entry["regions"]
        )
        return mutated

    # -- steps --------------------------------------------------------------

    def _source_step(self, shape, student, entry, ratios, rng):
        frame = self._student_input(entry, ratios, rng)
        x = extract_features(frame, entry["density"], entry["projection"])
        loss_seg, grad = seg_term(shape, student, x, entry["targets"], entry["weights"])
        rgb = frame.image.rgb[entry["pixel_rows"], entry["pixel_cols"]]
        loss_aux, grad_aux = aux_term(shape, student, rgb, entry["pixel_targets"])
        return loss_seg, loss_aux, grad + grad_aux

    def _target_step(self, shape, student, teacher, entry, ratios, rng, refiner, registry):
        clean = entry["clean_features"]
        teacher_probs, teacher_hidden = forward(shape, teacher, clean)

        frame = self._student_input(entry, ratios, rng)
        x = extract_features(frame, entry["density"], entry["projection"])

        if self.use_refinement:
            pred = derive_instances(
                teacher_probs,
                entry["frame"].points.positions,
                registry,
                eps=self.cluster_eps,
                min_pts=self.cluster_min_pts,
            )
            refined = refiner.refine(pred, entry["geo"], entry["vis"])
            targets, weights = refined.class_targets()
        else:
            targets = teacher_probs.argmax(axis=1)
            weights = np.ones(clean.shape[0], dtype=np.float64)

        loss_seg, grad = seg_term(shape, student, x, targets, weights)
        loss_con, grad_con = consistency_term(shape, student, x, teacher_hidden)
        return loss_seg, loss_con, grad + grad_con

    # -- fitting -------------------------------------------------------------

    def fit(self, source_frames, target_frames, target_proposals=None, eval_frames=None, init=None):
        source_frames = list(source_frames)
        target_frames = list(target_frames)
        if not source_frames:
            raise ValueError("need at least one source frame")
        if not target_frames and self.adapt_iterations > 0:
            raise ValueError("adaptation needs at least one target frame")
        if target_proposals is not None and len(target_proposals) != len(target_frames):
            raise ValueError("target_proposals must align with target_frames")
        if source_frames[0].labels is None:
            raise ValueError("source frames need ground-truth labels")

        registry = source_frames[0].labels.registry
        shape = ModelShape(self.hidden_units, len(registry.class_ids))
        rng = np.random.default_rng(self.seed)
        if init is None:
            student = init_parameters(shape, rng)
        else:
            student = np.array(init, dtype=np.float64).copy()
            if student.shape != (shape.n_parameters,):
                raise ValueError(
                    f"init has shape {student.shape}, expected ({shape.n_parameters},)"
                )

        ratios = self.drop_ratios if self.drop_ratios is not None else DropRatios()
        refiner = PseudoLabelRefiner(
            thing_conf_threshold=self.thing_conf_threshold,
            stuff_keep_fraction=self.stuff_keep_fraction,
            reassign_bound=self.reassign_bound,
            iou_min=self.overlap_min,
        )

        src = [self._prepare_source(f, ratios, registry) for f in source_frames]
        tgt = [
            self._prepare_target(
                f, target_proposals[i] if target_proposals is not None else None, ratios
            )
            for i, f in enumerate(target_frames)
        ]

        for it in range(self.pretrain_iterations):
            lr = learning_rate(self.learning_rate, it, self.pretrain_iterations)
            _, _, grad = self._source_step(shape, student, src[it % len(src)], ratios, rng)
            student -= lr * grad

        teacher = student.copy()
        self.shape_ = shape
        self.registry_ = registry
        trajectory = []

        for it in range(self.adapt_iterations):
            lr = learning_rate(self.learning_rate, it, self.adapt_iterations)
            loss_seg_s, loss_aux_s, grad_s = self._source_step(
                shape, student, src[it % len(src)], ratios, rng
            )
            loss_seg_t, loss_con, grad_t = self._target_step(
                shape, student, teacher, tgt[it % len(tgt)], ratios, rng, refiner, registry
            )
            student -= lr * (grad_s + grad_t)
            teacher = ema_update(teacher, student, self.ema_momentum)

            due = (
                eval_frames is not None
                and self.eval_interval > 0
                and ((it + 1) % self.eval_interval == 0 or it + 1 == self.adapt_iterations)
            )
            if due:
                self.student_params_ = student
                report = self.evaluate(eval_frames)
                trajectory.append(
                    {
                        "iteration": it + 1,
                        "pq": report.pq,
                        "pq_things": report.pq_things,
                        "pq_stuff": report.pq_stuff,
                        "miou": report.miou,
                        "loss_seg_source": loss_seg_s,
                        "loss_aux_source": loss_aux_s,
                        "loss_seg_target": loss_seg_t,
                        "loss_consistency": loss_con,
                    }
                )

        self.student_params_ = student
        self.teacher_params_ = teacher
        self.trajectory_ = trajectory
        self.n_iter_ = self.pretrain_iterations + self.adapt_iterations
        return self

    # -- inference -----------------------------------------------------------

    def _params_for(self, model):
        check_fitted(self, "student_params_")
        if model == "student":
            return self.student_params_
        if model == "teacher":
            check_fitted(self, "teacher_params_")
            return self.teacher_params_
        raise ValueError(f"model must be 'student' or 'teacher', got {model!r}")

    def predict_proba(self, frames, model="student"):
        theta = self._params_for(model)
        return [forward(self.shape_, theta, extract_features(f))[0] for f in frames]

    def predict(self, frames, model="student"):
        """Panoptic labelings; clustering noise is left as the ignore id."""
        theta = self._params_for(model)
        out = []
        for frame in frames:
            probs, _ = forward(self.shape_, theta, extract_features(frame))
            pred = derive_instances(
                probs,
                frame.points.positions,
                self.registry_,
                eps=self.cluster_eps,
                min_pts=self.cluster_min_pts,
            )
            out.append(prediction_to_ids(pred))
        return out

    def evaluate(self, frames, model="student"):
        """Panoptic report of the chosen network over labeled frames."""
        evaluator = PanopticEvaluator(self.registry_)
        for frame, ids in zip(frames, self.predict(frames, model=model)):
            if frame.labels is None:
                raise ValueError("evaluation frames need ground-truth labels")
            evaluator.update(ids, frame.labels.ids)
        return evaluator.report()
