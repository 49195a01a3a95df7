"""Command line interface: train / eval / detect / cam / profile."""

import argparse
import glob
import json
import os
import sys

from .checkpoint import load_checkpoint
from .common import LsmError
from .config import load_model_config, load_train_config
from .data import load_dataset, load_image
from .evaluation import format_table, write_report
from .inference import evaluate_model
from .profiling import profile_report
from .train import train
from .visualize import cam_overlay, detect_to_files


def _apply_seed_env(train_cfg):
    seed = os.environ.get("LSM_SEED")
    if seed is not None:
        train_cfg.seed = int(seed)


def cmd_train(args):
    model_cfg = load_model_config(args.model_cfg)
    train_cfg = load_train_config(args.train_cfg)
    _apply_seed_env(train_cfg)
    dataset = load_dataset(args.data, "train")
    try:
        val_set = load_dataset(args.data, "val")
    except LsmError:
        val_set = None
    model_cfg.num_classes = max(model_cfg.num_classes,
                                len(dataset.class_names))
    _, history, best = train(model_cfg, train_cfg, dataset, args.out,
                             val_set=val_set)
    print(f"trained {len(history)} epochs; best checkpoint: {best}")


def cmd_eval(args):
    model = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data, args.split)
    metrics = evaluate_model(model, dataset)
    print(format_table(metrics, dataset.class_names))
    if args.report:
        write_report(metrics, args.report)


def cmd_detect(args):
    model = load_checkpoint(args.ckpt)
    paths = sorted(glob.glob(args.images))
    if not paths:
        raise LsmError(f"no images match {args.images!r}")
    records = detect_to_files(model, paths, args.out,
                              score_thr=args.score_thr)
    n = sum(len(r.get("detections", [])) for r in records)
    print(f"{len(records)} images, {n} detections -> {args.out}")


def cmd_cam(args):
    model = load_checkpoint(args.ckpt)
    image = load_image(args.image)
    cam_overlay(model, image, args.layer, args.out, class_id=args.class_id)
    print(f"wrote CAM overlay to {args.out}")


def cmd_profile(args):
    model_cfg = load_model_config(args.model_cfg)
    from .network import build_model
    report = profile_report(build_model(model_cfg, seed=0))
    print(f"params: {report['params_m']:.3f} M")
    print(f"flops:  {report['gflops']:.2f} GFLOPs @ {report['input_size']}")
    print(f"{'module':<12}{'params':>12}{'flops':>16}")
    for row in report["modules"]:
        print(f"{row['module']:<12}{row['params']:>12}{row['flops']:>16}")
    if args.report:
        with open(args.report, "w") as f:
            json.dump(report, f, indent=2)


def build_parser():
    p = argparse.ArgumentParser(prog="lsm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a detector")
    t.add_argument("--model-cfg", required=True)
    t.add_argument("--train-cfg", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val")
    e.add_argument("--report", help="write JSON metric report here")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("detect", help="run detection on images")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--images", required=True, help="glob pattern")
    d.add_argument("--score-thr", type=float, default=0.25)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_detect)

    c = sub.add_parser("cam", help="class activation map overlay")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--image", required=True)
    c.add_argument("--layer", required=True)
    c.add_argument("--class-id", type=int, default=None)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cam)

    f = sub.add_parser("profile", help="parameter/FLOP report")
    f.add_argument("--model-cfg", required=True)
    f.add_argument("--report", help="write JSON report here")
    f.set_defaults(func=cmd_profile)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except LsmError as e:
        print(f"error {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
