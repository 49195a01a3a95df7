#!/usr/bin/env python3
"""End-to-end smoke demo on a generated toy dataset.

Synthesizes a small blob-detection corpus, trains a reduced model for a few
minutes on CPU, evaluates on the training subset, and writes annotated
detections plus a CAM overlay into the output directory.
"""

import argparse
import random
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from lsmyolo.config import AugmentPolicy, ModelConfig, TrainConfig
from lsmyolo.data import load_dataset
from lsmyolo.evaluation import format_table
from lsmyolo.inference import evaluate_model
from lsmyolo.train import train
from lsmyolo.visualize import cam_overlay, detect_to_files


def synthesize(root: Path, n_images=8, size=160, seed=3):
    rng = random.Random(seed)
    img_dir = root / "train" / "images"
    lbl_dir = root / "train" / "labels"
    img_dir.mkdir(parents=True, exist_ok=True)
    lbl_dir.mkdir(parents=True, exist_ok=True)
    (root / "classes.txt").write_text("blob\n")
    for i in range(n_images):
        np_rng = np.random.default_rng(seed * 1000 + i)
        arr = np_rng.integers(20, 60, (size, size, 3)).astype(np.uint8)
        im = Image.fromarray(arr)
        draw = ImageDraw.Draw(im)
        lines = []
        for _ in range(rng.randint(1, 2)):
            w = rng.randint(size // 4, size // 2)
            h = rng.randint(size // 4, size // 2)
            x1 = rng.randint(0, size - w - 1)
            y1 = rng.randint(0, size - h - 1)
            draw.ellipse([x1, y1, x1 + w, y1 + h], fill=(220, 60, 60),
                         outline=(250, 250, 250), width=3)
            cx, cy = (x1 + w / 2) / size, (y1 + h / 2) / size
            lines.append(f"0 {cx:.6f} {cy:.6f} {w / size:.6f} {h / size:.6f}")
        im.save(img_dir / f"img_{i:03d}.png")
        (lbl_dir / f"img_{i:03d}.txt").write_text("\n".join(lines) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()

    data_root = Path(tempfile.mkdtemp(prefix="lsm_demo_"))
    synthesize(data_root)
    dataset = load_dataset(data_root, "train")

    model_cfg = ModelConfig(num_classes=1, input_size=160,
                            stage_widths=[8, 16, 24, 32, 48],
                            head_width=32, reg_max=8)
    train_cfg = TrainConfig(epochs=args.epochs, batch_size=4, lr=0.01,
                            final_lr=0.0005, warmup_epochs=3, seed=0,
                            augment=AugmentPolicy.identity())
    model, history, _ = train(model_cfg, train_cfg, dataset, args.out)
    print(f"final loss {history[-1]['loss']:.3f}")
    print(format_table(evaluate_model(model, dataset), dataset.class_names))

    out = Path(args.out)
    paths = sorted((data_root / "train" / "images").glob("*.png"))
    detect_to_files(model, paths, out / "detections", score_thr=0.25,
                    class_names=dataset.class_names)
    from lsmyolo.data import load_image
    cam_overlay(model, load_image(paths[0]), "td2", out / "cam_td2.png")
    print(f"wrote annotated detections and CAM overlay under {out}")


if __name__ == "__main__":
    main()
