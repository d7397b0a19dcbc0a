"""Command line interface.

Subcommands cover the full loop: ``gen`` builds a two-domain synthetic
dataset, ``pretrain`` fits the student on the source split, ``adapt`` runs
mean-teacher adaptation towards the target split, ``eval`` scores a
checkpoint, ``refine`` dumps the pseudo-labels for one frame and
``export-errormap`` writes a colored point cloud of prediction errors.

Exit codes: 0 on success, 2 for input errors (bad arguments, bad files),
1 for anything unexpected.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides, dump_config, read_config
from .core import ClassRegistry
from .io import (
    load_frame,
    load_split,
    read_checkpoint,
    read_proposals,
    read_registry,
    save_frame,
    write_checkpoint,
    write_labels,
    write_manifest,
    write_ply_xyzrgb,
    write_proposals,
    write_registry,
    write_weights,
)
from .metrics import match_segments
from .model import ModelShape, extract_features, forward
from .pseudolabel import PseudoLabelRefiner
from .superpoints import extract_geometric_superpoints, lift_visual_masks
from .synth import apply_domain_shift, generate_scene, make_oracle_proposals
from .trainer import derive_instances, write_trajectory

COLOR_MATCHED = (169, 169, 169)
COLOR_MISMATCHED = (0, 0, 255)
COLOR_FALSE_POSITIVE = (255, 0, 0)
COLOR_FALSE_NEGATIVE = (54, 118, 33)


def _build_parser():
    parser = argparse.ArgumentParser(prog="panodapt")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (key = value lines)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    common.add_argument("--seed", type=int, help="override the config seed")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a two-domain dataset")
    p.add_argument("--out", required=True, help="dataset root directory")

    p = sub.add_parser("pretrain", parents=[common], help="train on the source split")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="checkpoint file to write")

    p = sub.add_parser("adapt", parents=[common], help="mean-teacher adaptation")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--init", help="start from this checkpoint and skip pretraining")
    p.add_argument(
        "--proposals",
        choices=("oracle", "none"),
        default="oracle",
        help="2D proposal source for pseudo-label reassignment",
    )
    p.add_argument("--trajectory", help="also write the evaluation trajectory CSV here")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a split")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--split", default="target", help="dataset split (default target)")
    p.add_argument("--model", choices=("student", "teacher"), default="student")
    p.add_argument("--out", help="write the report as key=value lines here")

    p = sub.add_parser("refine", parents=[common], help="dump pseudo-labels for one frame")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--frame", required=True, help="frame id inside the split")
    p.add_argument("--split", default="target", help="dataset split (default target)")
    p.add_argument("--model", choices=("student", "teacher"), default="teacher")
    p.add_argument("--proposals", help="proposal file; omit to derive oracle proposals")
    p.add_argument("--dump-proposals", help="write the proposals that were used here")
    p.add_argument("--out", required=True, help="output prefix (.lbl and .wgt are added)")

    p = sub.add_parser(
        "export-errormap", parents=[common], help="color prediction errors as a PLY cloud"
    )
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--frame", required=True, help="frame id inside the split")
    p.add_argument("--split", default="target", help="dataset split (default target)")
    p.add_argument("--model", choices=("student", "teacher"), default="student")
    p.add_argument("--out", required=True, help="PLY file to write")
    return parser


def _load_config(args):
    cfg = read_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _oracle_proposals(cfg, frames, base_seed):
    out = []
    for i, frame in enumerate(frames):
        proposals, _ = make_oracle_proposals(
            frame,
            flip_prob=cfg.proposal_flip_prob,
            erosion=cfg.proposal_erosion,
            conf_range=(cfg.proposal_conf_min, cfg.proposal_conf_max),
            seed=base_seed + i,
        )
        out.append(proposals)
    return out


def _adapter_from_checkpoint(cfg, registry, path):
    adapter = cfg.to_adapter()
    shape = ModelShape(cfg.hidden_units, len(registry.class_ids))
    student, teacher, _ = read_checkpoint(path)
    if student.shape != (shape.n_parameters,):
        raise ValueError(
            f"checkpoint holds {student.shape[0]} parameters, expected {shape.n_parameters}"
        )
    adapter.shape_ = shape
    adapter.registry_ = registry
    adapter.student_params_ = student
    adapter.teacher_params_ = teacher
    return adapter


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_gen(args):
    cfg = _load_config(args)
    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    registry = ClassRegistry.default()
    write_registry(root, registry)
    (root / "config.txt").write_text(dump_config(cfg))

    shift = cfg.to_shift_params()
    for split, scene_base, shift_base in (
        ("source", cfg.seed, None),
        ("target", cfg.seed + cfg.frames, cfg.seed + 2 * cfg.frames),
    ):
        ids = []
        for i in range(cfg.frames):
            frame = generate_scene(cfg.to_scene_config(seed=scene_base + i, registry=registry))
            if shift_base is not None:
                frame = apply_domain_shift(frame, shift, seed=shift_base + i)
            frame = dataclasses.replace(frame, frame_id=f"{i:04d}")
            save_frame(root / split, frame)
            ids.append(frame.frame_id)
        write_manifest(root / split, ids)
    print(f"wrote {cfg.frames} source and {cfg.frames} target frames under {root}")
    return 0


def _cmd_pretrain(args):
    cfg = _load_config(args)
    source = load_split(args.data, "source")
    adapter = cfg.to_adapter().set_params(adapt_iterations=0)
    adapter.fit(source, [])
    write_checkpoint(args.out, adapter.student_params_, adapter.teacher_params_, adapter.n_iter_)
    print(f"pretrained for {adapter.n_iter_} iterations -> {args.out}")
    return 0


def _cmd_adapt(args):
    cfg = _load_config(args)
    source = load_split(args.data, "source")
    target = load_split(args.data, "target")
    proposals = None
    if args.proposals == "oracle":
        proposals = _oracle_proposals(cfg, target, cfg.seed + 3 * cfg.frames)

    adapter = cfg.to_adapter()
    init = None
    if args.init:
        init, _, _ = read_checkpoint(args.init)
        adapter.set_params(pretrain_iterations=0)
    eval_frames = target if cfg.eval_interval > 0 else None
    adapter.fit(source, target, target_proposals=proposals, eval_frames=eval_frames, init=init)
    write_checkpoint(args.out, adapter.student_params_, adapter.teacher_params_, adapter.n_iter_)
    if args.trajectory:
        write_trajectory(args.trajectory, adapter.trajectory_)
    print(f"adapted for {adapter.adapt_iterations} iterations -> {args.out}")
    return 0


def _cmd_eval(args):
    cfg = _load_config(args)
    registry = read_registry(args.data)
    frames = load_split(args.data, args.split)
    adapter = _adapter_from_checkpoint(cfg, registry, args.ckpt)
    report = adapter.evaluate(frames, model=args.model)
    print(report.format_table(registry))
    if args.out:
        Path(args.out).write_text("\n".join(report.to_key_values(registry)) + "\n")
    return 0


def _cmd_refine(args):
    cfg = _load_config(args)
    registry = read_registry(args.data)
    frame = load_frame(Path(args.data) / args.split, args.frame, registry)
    adapter = _adapter_from_checkpoint(cfg, registry, args.ckpt)
    theta = adapter.student_params_ if args.model == "student" else adapter.teacher_params_

    probs, _ = forward(adapter.shape_, theta, extract_features(frame))
    pred = derive_instances(
        probs, frame.points.positions, registry, eps=cfg.cluster_eps, min_pts=cfg.cluster_min_pts
    )
    _, geo = extract_geometric_superpoints(
        frame.points,
        ransac_iterations=cfg.ransac_iterations,
        ransac_threshold=cfg.ransac_threshold,
        eps=cfg.cluster_eps,
        min_pts=cfg.cluster_min_pts,
        seed=cfg.seed,
    )
    if args.proposals:
        proposals, shape2d = read_proposals(args.proposals)
        if shape2d != (frame.image.height, frame.image.width):
            raise ValueError("proposal image shape does not match the frame")
    else:
        proposals, shape2d = make_oracle_proposals(
            frame,
            flip_prob=cfg.proposal_flip_prob,
            erosion=cfg.proposal_erosion,
            conf_range=(cfg.proposal_conf_min, cfg.proposal_conf_max),
            seed=cfg.seed,
        )
    if args.dump_proposals:
        write_proposals(args.dump_proposals, proposals, shape2d)
    vis = lift_visual_masks(proposals, frame, cfg.min_mask_points)

    refiner = PseudoLabelRefiner(
        thing_conf_threshold=cfg.thing_conf_threshold,
        stuff_keep_fraction=cfg.stuff_keep_fraction,
        reassign_bound=cfg.reassign_bound,
        iou_min=cfg.overlap_min,
    )
    refined = refiner.refine(pred, geo, vis)
    write_labels(args.out + ".lbl", refined.to_labeling().ids)
    write_weights(args.out + ".wgt", refined.weights)
    covered = int(np.count_nonzero(refined.weights))
    print(f"{refined.n_segments} segments cover {covered}/{frame.points.n} points -> {args.out}.lbl")
    return 0


def _cmd_errormap(args):
    cfg = _load_config(args)
    registry = read_registry(args.data)
    frame = load_frame(Path(args.data) / args.split, args.frame, registry)
    adapter = _adapter_from_checkpoint(cfg, registry, args.ckpt)

    pred_ids = adapter.predict([frame], model=args.model)[0]
    gt_ids = frame.labels.ids
    matches = match_segments(pred_ids, gt_ids, registry)
    matched_pairs = {(p, g) for p, g, _ in matches.pairs}
    matched_pred = {p for p, _, _ in matches.pairs}
    matched_gt = {g for _, g, _ in matches.pairs}
    unmatched_pred = set(matches.unmatched_pred)
    unmatched_gt = set(matches.unmatched_gt)

    colors = np.empty((frame.points.n, 3), dtype=np.uint8)
    colors[:] = COLOR_MATCHED
    for i in range(frame.points.n):
        p, g = int(pred_ids[i]), int(gt_ids[i])
        if (p, g) in matched_pairs:
            colors[i] = COLOR_MATCHED
        elif p in matched_pred or g in matched_gt:
            colors[i] = COLOR_MISMATCHED
        elif p in unmatched_pred:
            colors[i] = COLOR_FALSE_POSITIVE
        elif g in unmatched_gt:
            colors[i] = COLOR_FALSE_NEGATIVE
    write_ply_xyzrgb(args.out, frame.points.positions, colors)
    summary = {
        "matched": int(np.all(colors == COLOR_MATCHED, axis=1).sum()),
        "mismatched": int(np.all(colors == COLOR_MISMATCHED, axis=1).sum()),
        "false_positive": int(np.all(colors == COLOR_FALSE_POSITIVE, axis=1).sum()),
        "false_negative": int(np.all(colors == COLOR_FALSE_NEGATIVE, axis=1).sum()),
    }
    print(" ".join(f"{k}={v}" for k, v in summary.items()) + f" -> {args.out}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "pretrain": _cmd_pretrain,
    "adapt": _cmd_adapt,
    "eval": _cmd_eval,
    "refine": _cmd_refine,
    "export-errormap": _cmd_errormap,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"unexpected error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
