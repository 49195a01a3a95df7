#!/usr/bin/env python3
"""Full-dataset training runner (300 epochs at 640x640 by default).

Expects a dataset root in one of the supported layouts (YOLO-txt with
train/val splits, or a JSON index). Example:

    python scripts/train_full.py --data /path/to/bccd --classes 3 \
        --out runs/bccd

The run writes history.jsonl, best.ckpt, and last.ckpt under --out and
prints the final validation metric table.
"""

import argparse
from pathlib import Path

from lsmyolo.config import load_model_config, load_train_config
from lsmyolo.data import load_dataset
from lsmyolo.evaluation import format_table
from lsmyolo.inference import evaluate_model
from lsmyolo.train import train

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True, help="dataset root")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--model-cfg",
                    default=str(ROOT / "configs" / "model_default.yaml"))
    ap.add_argument("--train-cfg",
                    default=str(ROOT / "configs" / "train_default.yaml"))
    ap.add_argument("--classes", type=int, default=None,
                    help="override the number of classes")
    ap.add_argument("--epochs", type=int, default=None)
    args = ap.parse_args()

    model_cfg = load_model_config(args.model_cfg)
    train_cfg = load_train_config(args.train_cfg)
    if args.epochs is not None:
        train_cfg.epochs = args.epochs

    train_set = load_dataset(args.data, "train")
    val_set = load_dataset(args.data, "val")
    model_cfg.num_classes = (args.classes if args.classes is not None
                             else max(len(train_set.class_names), 1))

    model, history, best = train(model_cfg, train_cfg, train_set, args.out,
                                 val_set=val_set)
    print(f"finished {len(history)} epochs; best checkpoint: {best}")
    metrics = evaluate_model(model, val_set, iou_thr=train_cfg.nms_iou,
                             score_thr=train_cfg.score_thr)
    print(format_table(metrics, val_set.class_names))


if __name__ == "__main__":
    main()
