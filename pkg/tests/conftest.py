import random

import numpy as np
import pytest
import torch
from PIL import Image, ImageDraw

from lsmyolo.config import ModelConfig


def tiny_model_config(**overrides):
    """Small config for fast tests; 4 heads at strides 4/8/16/32."""
    base = dict(
        num_classes=2,
        input_size=64,
        stage_widths=[8, 16, 16, 16, 16],
        stage_depths=[1, 1, 1, 1],
        head_width=16,
        reg_max=8,
        msfm_reduction=1,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_model_config()


def make_synthetic_dataset(root, n_images=8, size=320, n_classes=1, seed=0,
                           split="train", min_boxes=1, max_boxes=2):
    """Writes a small YOLO-layout detection dataset of bright blobs on a
    noisy background; returns the per-image ground truths."""
    rng = random.Random(seed)
    img_dir = root / split / "images"
    lbl_dir = root / split / "labels"
    img_dir.mkdir(parents=True, exist_ok=True)
    lbl_dir.mkdir(parents=True, exist_ok=True)
    (root / "classes.txt").write_text(
        "\n".join(f"cls{i}" for i in range(n_classes)) + "\n")
    colors = [(220, 60, 60), (60, 90, 220), (70, 200, 90)]
    gts = {}
    for i in range(n_images):
        np_rng = np.random.default_rng(seed * 1000 + i)
        arr = (np_rng.integers(20, 60, (size, size, 3))).astype(np.uint8)
        im = Image.fromarray(arr)
        draw = ImageDraw.Draw(im)
        lines = []
        boxes = []
        for _ in range(rng.randint(min_boxes, max_boxes)):
            w = rng.randint(size // 4, size // 2)
            h = rng.randint(size // 4, size // 2)
            x1 = rng.randint(0, size - w - 1)
            y1 = rng.randint(0, size - h - 1)
            cid = rng.randrange(n_classes)
            draw.ellipse([x1, y1, x1 + w, y1 + h], fill=colors[cid % 3],
                         outline=(250, 250, 250), width=3)
            cx, cy = (x1 + w / 2) / size, (y1 + h / 2) / size
            lines.append(f"{cid} {cx:.6f} {cy:.6f} {w / size:.6f} {h / size:.6f}")
            boxes.append((cid, x1, y1, x1 + w, y1 + h))
        name = f"img_{i:03d}"
        im.save(img_dir / f"{name}.png")
        (lbl_dir / f"{name}.txt").write_text("\n".join(lines) + "\n")
        gts[name] = boxes
    return gts


@pytest.fixture
def synthetic_dataset(tmp_path):
    gts = make_synthetic_dataset(tmp_path, n_images=4, size=160)
    return tmp_path, gts


def seed_all(seed):
    torch.manual_seed(seed)
    np.random.seed(seed)
    random.seed(seed)
