"""Command-line surface: dataset generation, training, evaluation and
static visualization.

Exit codes: 0 success, 2 usage/config problems, 3 runtime failures.
Every output directory receives a resolved-config snapshot sufficient to
reproduce the run.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from .config import DatasetConfig, ExperimentConfig, TrainConfig
from .exceptions import (
    CheckpointMismatch,
    ConfigError,
    DivergedLoss,
    GeometryError,
    OccludetError,
    ParseError,
    ShapeMismatch,
    SpecInfeasible,
)

_USAGE_ERRORS = (ConfigError, ParseError, CheckpointMismatch, ShapeMismatch,
                 GeometryError, FileNotFoundError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="occludet",
        description="Occluded pedestrian detection: visible-region detection "
                    "plus full-body estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--spec", required=True, help="scene spec JSON file")
    gen.add_argument("--count", type=int, required=True, help="number of scenes")
    gen.add_argument("--seed", type=int, default=0, help="first scene seed")
    gen.add_argument("--out", required=True, help="output dataset directory")

    train = sub.add_parser("train", help="train a detector from a config")
    train.add_argument("--config", required=True, help="experiment config JSON")
    train.add_argument("--output-dir", default=None, help="override output dir")
    train.add_argument("--variant", default=None)
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--label-mode", default=None, choices=["hard", "soft"])
    train.add_argument("--nms-mode", default=None, choices=["full", "visible"])

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--config", default=None,
                    help="experiment config (source of test data; its arch "
                         "must match the checkpoint)")
    ev.add_argument("--dataset", default=None, help="dataset directory")
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--nms-mode", default=None, choices=["full", "visible"])
    ev.add_argument("--iou-threshold", type=float, default=None)
    ev.add_argument("--sweep", action="store_true",
                    help="emit the 5-threshold matching sweep")
    ev.add_argument("--diagnostic", default=None,
                    choices=["P-VDN", "P-VDN+NMS", "P-FEN"])
    ev.add_argument("--plots", action="store_true",
                    help="emit PR and FPPI-missrate curve images")

    vis = sub.add_parser("visualize", help="render detection overlays")
    vis.add_argument("--checkpoint", required=True)
    vis.add_argument("--images", required=True,
                     help="dataset directory, image directory, or one image")
    vis.add_argument("--out", required=True)
    vis.add_argument("--min-score", type=float, default=0.3,
                     help="display filter on detection scores")
    vis.add_argument("--limit", type=int, default=None,
                     help="render at most this many images")
    return parser


def cmd_gen_data(args) -> int:
    from .scenes import SceneSpec, generate_scene, save_dataset

    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise ConfigError(f"spec file {spec_path} does not exist")
    try:
        spec = SceneSpec.from_dict(json.loads(spec_path.read_text()))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scene spec: {exc}") from exc
    scenes = [generate_scene(spec, args.seed + i) for i in range(args.count)]
    out = save_dataset(scenes, args.out, spec=spec)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def _apply_train_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    overrides = {}
    for flag, key in (("variant", "variant"), ("epochs", "epochs"),
                      ("seed", "seed"), ("label_mode", "label_mode"),
                      ("nms_mode", "nms_mode")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    train = TrainConfig.from_dict({**cfg.train.to_dict(), **overrides}) \
        if overrides else cfg.train
    output_dir = args.output_dir or cfg.output_dir
    return dataclasses.replace(cfg, train=train, output_dir=output_dir)


def cmd_train(args) -> int:
    from .detector import LOG_COLUMNS, PedestrianDetector

    cfg = _apply_train_overrides(ExperimentConfig.from_json(args.config), args)
    if cfg.train_data is None:
        raise ConfigError("config has no 'train_data'")
    scenes = cfg.train_data.load_scenes()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_snapshot(out / "config_resolved.json")

    detector = PedestrianDetector(**cfg.train.to_dict())
    detector.fit(scenes)
    detector.save(out / "checkpoint.npz")
    with open(out / "training_log.csv", "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        writer.writerows(detector.training_log_)
    last = detector.training_log_[-1]
    print(f"trained {cfg.train.variant} for {cfg.train.epochs} epochs; "
          f"final loss {last['total']:.4f}; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    from .detector import PedestrianDetector, infer_image, run_diagnostic
    from .metrics import evaluate, threshold_sweep, write_detections

    expect = None
    exp_cfg = None
    if args.config:
        exp_cfg = ExperimentConfig.from_json(args.config)
        expect = exp_cfg.train
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint {args.checkpoint} does not exist")
    detector = PedestrianDetector.load(args.checkpoint, expect_config=expect)

    if args.dataset:
        scenes = DatasetConfig(dir=args.dataset).load_scenes()
    elif exp_cfg is not None and exp_cfg.test_data is not None:
        scenes = exp_cfg.test_data.load_scenes()
    else:
        raise ConfigError("eval needs --dataset or a config with 'test_data'")

    cfg = detector.config_
    if args.nms_mode:
        cfg = dataclasses.replace(cfg, nms_mode=args.nms_mode)
    iou_threshold = args.iou_threshold
    if iou_threshold is None:
        iou_threshold = exp_cfg.eval_iou_threshold if exp_cfg else 0.5

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dets_per_image = [infer_image(detector.model_, s.image, cfg) for s in scenes]
    gts_per_image = [s.pedestrians for s in scenes]
    metrics = evaluate(dets_per_image, gts_per_image, iou_threshold)
    report = {
        "n_images": len(scenes),
        "nms_mode": cfg.resolved_nms_mode,
        "nms_threshold": cfg.nms_threshold,
        "variant": cfg.variant,
        "metrics": metrics.to_dict(),
    }
    if args.sweep:
        rows = threshold_sweep(dets_per_image, gts_per_image)
        report["sweep"] = [r.to_dict() for r in rows]
    if args.diagnostic:
        diag_dets = run_diagnostic(detector.model_, args.diagnostic, scenes, cfg)
        diag = evaluate(diag_dets, gts_per_image, iou_threshold)
        report["diagnostic"] = {"mode": args.diagnostic, **diag.to_dict()}
    if args.plots:
        from .visualize import plot_metric_curves

        plot_metric_curves(metrics, out)

    write_detections(
        out / "detections.jsonl",
        {s.image_id: d for s, d in zip(scenes, dets_per_image)},
    )
    snapshot = {"train": cfg.to_dict(), "eval_iou_threshold": iou_threshold,
                "checkpoint": str(args.checkpoint)}
    (out / "config_resolved.json").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True)
    )
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report["metrics"], indent=2, sort_keys=True))
    return 0


def _collect_images(path: Path):
    from PIL import Image
    import numpy as np

    from .scenes import load_dataset

    if path.is_dir() and (path / "annotations.odgt").exists():
        return [(s.image_id, s.image) for s in load_dataset(path)]
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not files:
            raise ConfigError(f"no images found under {path}")
    elif path.exists():
        files = [path]
    else:
        raise ConfigError(f"image path {path} does not exist")
    out = []
    for f in files:
        try:
            arr = np.asarray(Image.open(f).convert("RGB"), dtype=np.float64) / 255.0
        except OSError as exc:
            raise ConfigError(f"unreadable image {f}: {exc}") from exc
        out.append((f.stem, arr))
    return out


def cmd_visualize(args) -> int:
    from .detector import PedestrianDetector, infer_verbose, part_scores_for_boxes
    from .geometry import boxes_to_array
    from .nms import filter_by_score
    from .visualize import save_overlay

    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint {args.checkpoint} does not exist")
    detector = PedestrianDetector.load(args.checkpoint)
    cfg = detector.config_
    images = _collect_images(Path(args.images))
    if args.limit is not None:
        images = images[: args.limit]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for image_id, image in images:
        kept, suppressed = infer_verbose(detector.model_, image, cfg)
        kept = filter_by_score(kept, args.min_score)
        suppressed = filter_by_score(suppressed, args.min_score)
        if cfg.variant == "V2F" and kept:
            scores = part_scores_for_boxes(
                detector.model_, image, boxes_to_array([d.visible for d in kept])
            )
            for det, ps in zip(kept, scores):
                det.part_scores = ps
        save_overlay(out / f"{image_id}_overlay.png", image, kept, suppressed)
    snapshot = {"train": cfg.to_dict(), "min_score": args.min_score,
                "checkpoint": str(args.checkpoint)}
    (out / "config_resolved.json").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True)
    )
    print(f"wrote {len(images)} overlays to {out}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "visualize": cmd_visualize,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SpecInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergedLoss, OccludetError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
