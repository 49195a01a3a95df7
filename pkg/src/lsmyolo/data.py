"""Dataset ingestion, letterbox preprocessing, and augmentation.

Two annotation layouts are recognized:
  (a) one text file per image with lines "class cx cy w h", normalized;
  (b) a single JSON index with images/annotations/categories tables
      (absolute-pixel [x, y, w, h] boxes).
Split membership comes from newline-separated manifest files when present,
otherwise from train/ and val/ (or valid/) subdirectories.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .common import LsmError
from .config import AugmentPolicy

log = logging.getLogger(__name__)

IMAGE_EXTS = (".jpg", ".jpeg", ".png", ".bmp")
PAD_VALUE = 114  # conventional letterbox gray


class DatasetError(LsmError):
    code = "dataset"


@dataclass
class ImageRecord:
    image_id: str
    path: Path
    width: int
    height: int
    boxes: np.ndarray          # (m, 4) xyxy pixels
    labels: np.ndarray         # (m,) int


@dataclass
class GroundTruthSet:
    records: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class LetterboxTransform:
    scale: float
    pad_left: float
    pad_top: float

    def apply(self, boxes: np.ndarray) -> np.ndarray:
        out = np.asarray(boxes, dtype=np.float64).copy()
        out[..., [0, 2]] = out[..., [0, 2]] * self.scale + self.pad_left
        out[..., [1, 3]] = out[..., [1, 3]] * self.scale + self.pad_top
        return out

    def invert(self, boxes: np.ndarray) -> np.ndarray:
        out = np.asarray(boxes, dtype=np.float64).copy()
        out[..., [0, 2]] = (out[..., [0, 2]] - self.pad_left) / self.scale
        out[..., [1, 3]] = (out[..., [1, 3]] - self.pad_top) / self.scale
        return out


def _validate_record(rec: ImageRecord, source: str):
    keep = []
    for i, (x1, y1, x2, y2) in enumerate(rec.boxes):
        if x2 <= x1 or y2 <= y1:
            log.warning("%s: dropping degenerate box %d", source, i)
            continue
        if x1 < -0.5 or y1 < -0.5 or x2 > rec.width + 0.5 or y2 > rec.height + 0.5:
            raise DatasetError(
                f"{source}: box {i} ({x1},{y1},{x2},{y2}) outside "
                f"{rec.width}x{rec.height} image"
            )
        keep.append(i)
    rec.boxes = np.clip(rec.boxes[keep], 0, None)
    rec.boxes[:, [0, 2]] = rec.boxes[:, [0, 2]].clip(0, rec.width)
    rec.boxes[:, [1, 3]] = rec.boxes[:, [1, 3]].clip(0, rec.height)
    rec.labels = rec.labels[keep]


def _image_size(path: Path):
    with Image.open(path) as im:
        return im.size  # (w, h)


def _load_yolo_record(img_path: Path, label_path: Path) -> ImageRecord:
    w, h = _image_size(img_path)
    boxes, labels = [], []
    if label_path.exists():
        for lineno, line in enumerate(label_path.read_text().splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DatasetError(f"{label_path}:{lineno}: expected 5 fields")
            try:
                cid = int(parts[0])
                cx, cy, bw, bh = map(float, parts[1:])
            except ValueError:
                raise DatasetError(f"{label_path}:{lineno}: malformed number")
            boxes.append([(cx - bw / 2) * w, (cy - bh / 2) * h,
                          (cx + bw / 2) * w, (cy + bh / 2) * h])
            labels.append(cid)
    rec = ImageRecord(img_path.stem, img_path, w, h,
                      np.array(boxes, dtype=np.float64).reshape(-1, 4),
                      np.array(labels, dtype=np.int64))
    _validate_record(rec, str(label_path))
    return rec


def _split_images(root: Path, split: str):
    manifest = root / f"{split}.txt"
    if manifest.exists():
        paths = []
        for line in manifest.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            p = (root / line) if not Path(line).is_absolute() else Path(line)
            if not p.exists():
                raise DatasetError(f"{manifest}: missing image {line}")
            paths.append(p)
        return paths
    for candidate in (split, "valid" if split == "val" else split):
        img_dir = root / candidate / "images"
        if img_dir.is_dir():
            return sorted(p for p in img_dir.iterdir()
                          if p.suffix.lower() in IMAGE_EXTS)
        flat = root / candidate
        if flat.is_dir():
            return sorted(p for p in flat.iterdir()
                          if p.suffix.lower() in IMAGE_EXTS)
    raise DatasetError(f"no {split} split under {root}")


def _label_path_for(img_path: Path) -> Path:
    if img_path.parent.name == "images":
        return img_path.parent.parent / "labels" / (img_path.stem + ".txt")
    return img_path.with_suffix(".txt")


def load_yolo_dataset(root, split, class_names=None) -> GroundTruthSet:
    root = Path(root)
    names_file = root / "classes.txt"
    if class_names is None:
        class_names = (names_file.read_text().split() if names_file.exists()
                       else [])
    records = [_load_yolo_record(p, _label_path_for(p))
               for p in _split_images(root, split)]
    n_cls = len(class_names) or (
        max((int(r.labels.max()) for r in records if len(r.labels)),
            default=-1) + 1)
    for rec in records:
        if len(rec.labels) and rec.labels.max() >= max(n_cls, 1):
            raise DatasetError(
                f"{rec.path}: class id {int(rec.labels.max())} out of range"
            )
    if not class_names:
        class_names = [f"class_{i}" for i in range(max(n_cls, 1))]
    return GroundTruthSet(records, class_names)


def load_index_dataset(root, split) -> GroundTruthSet:
    root = Path(root)
    index_path = root / f"{split}.json"
    if not index_path.exists():
        index_path = root / split / "annotations.json"
    if not index_path.exists():
        raise DatasetError(f"no annotation index for split {split} in {root}")
    index = json.loads(index_path.read_text())
    cats = sorted(index.get("categories", []), key=lambda c: c["id"])
    cat_remap = {c["id"]: i for i, c in enumerate(cats)}
    class_names = [c.get("name", f"class_{i}") for i, c in enumerate(cats)]

    by_image = {}
    for ann in index.get("annotations", []):
        by_image.setdefault(ann["image_id"], []).append(ann)

    records = []
    for info in index.get("images", []):
        img_path = root / info["file"]
        if not img_path.exists():
            img_path = root / split / info["file"]
        if not img_path.exists():
            raise DatasetError(f"{index_path}: missing image {info['file']}")
        boxes, labels = [], []
        for ann in by_image.get(info["id"], []):
            x, y, w, h = ann["bbox"]
            boxes.append([x, y, x + w, y + h])
            labels.append(cat_remap[ann["category_id"]])
        rec = ImageRecord(str(info["id"]), img_path, info["width"],
                          info["height"],
                          np.array(boxes, dtype=np.float64).reshape(-1, 4),
                          np.array(labels, dtype=np.int64))
        _validate_record(rec, str(index_path))
        records.append(rec)
    return GroundTruthSet(records, class_names)


def load_dataset(root, split="train", fmt="auto") -> GroundTruthSet:
    root = Path(root)
    if fmt == "auto":
        has_index = (root / f"{split}.json").exists() or \
            (root / split / "annotations.json").exists()
        fmt = "index" if has_index else "yolo"
    if fmt == "yolo":
        return load_yolo_dataset(root, split)
    if fmt == "index":
        return load_index_dataset(root, split)
    raise DatasetError(f"unknown dataset format {fmt!r}")


def letterbox(image: np.ndarray, boxes: np.ndarray, target=640):
    """Aspect-preserving resize + symmetric gray padding to target x target.

    image: (h, w, 3) uint8. Returns (image', boxes', transform).
    """
    if target % 32:
        raise DatasetError("letterbox target must be divisible by 32")
    h, w = image.shape[:2]
    scale = target / max(w, h)
    new_w, new_h = round(w * scale), round(h * scale)
    resized = np.asarray(
        Image.fromarray(image).resize((new_w, new_h), Image.BILINEAR))
    out = np.full((target, target, 3), PAD_VALUE, dtype=np.uint8)
    pad_left = (target - new_w) // 2
    pad_top = (target - new_h) // 2
    out[pad_top:pad_top + new_h, pad_left:pad_left + new_w] = resized
    tfm = LetterboxTransform(scale=scale, pad_left=float(pad_left),
                             pad_top=float(pad_top))
    return out, tfm.apply(boxes), tfm


def hflip(image, boxes):
    flipped = image[:, ::-1].copy()
    w = image.shape[1]
    out = boxes.copy()
    out[:, 0], out[:, 2] = w - boxes[:, 2], w - boxes[:, 0]
    return flipped, out


def _hsv_jitter(image, rng, policy):
    hsv = np.asarray(Image.fromarray(image).convert("HSV"), dtype=np.int16)
    gains = [policy.hsv_h, policy.hsv_s, policy.hsv_v]
    for ch, gain in enumerate(gains):
        if gain <= 0:
            continue
        delta = rng.uniform(-gain, gain)
        if ch == 0:
            hsv[..., 0] = (hsv[..., 0] + int(delta * 255)) % 256
        else:
            hsv[..., ch] = np.clip(hsv[..., ch] * (1 + delta), 0, 255)
    return np.asarray(
        Image.fromarray(hsv.astype(np.uint8), "HSV").convert("RGB"))


def augment(image, boxes, policy: AugmentPolicy, rng: random.Random):
    """Seeded per-image augmentation; boxes stay valid and in-bounds."""
    h, w = image.shape[:2]
    boxes = boxes.copy()
    if policy.hflip_prob > 0 and rng.random() < policy.hflip_prob:
        image, boxes = hflip(image, boxes)
    if policy.scale_jitter > 0:
        s = 1 + rng.uniform(-policy.scale_jitter, policy.scale_jitter)
        new_w, new_h = max(round(w * s), 2), max(round(h * s), 2)
        image = np.asarray(
            Image.fromarray(image).resize((new_w, new_h), Image.BILINEAR))
        boxes[:, [0, 2]] *= new_w / w
        boxes[:, [1, 3]] *= new_h / h
        h, w = new_h, new_w
    if policy.hsv_h > 0 or policy.hsv_s > 0 or policy.hsv_v > 0:
        image = _hsv_jitter(image, rng, policy)
    boxes[:, [0, 2]] = boxes[:, [0, 2]].clip(0, w)
    boxes[:, [1, 3]] = boxes[:, [1, 3]].clip(0, h)
    return image, boxes


def mosaic(samples, target=640, rng: random.Random | None = None):
    """Combine four (image, boxes, labels) samples into one target x target
    canvas split at a random center; boxes are rescaled into their quadrant."""
    if len(samples) != 4:
        raise DatasetError(f"mosaic needs 4 samples, got {len(samples)}")
    rng = rng or random.Random(0)
    xc = int(rng.uniform(0.25, 0.75) * target)
    yc = int(rng.uniform(0.25, 0.75) * target)
    canvas = np.full((target, target, 3), PAD_VALUE, dtype=np.uint8)
    rects = [(0, 0, xc, yc), (xc, 0, target, yc),
             (0, yc, xc, target), (xc, yc, target, target)]
    out_boxes, out_labels = [], []
    for (image, boxes, labels), (x1, y1, x2, y2) in zip(samples, rects):
        rw, rh = x2 - x1, y2 - y1
        if rw < 2 or rh < 2:
            continue
        h, w = image.shape[:2]
        scale = min(rw / w, rh / h)
        nw, nh = max(round(w * scale), 1), max(round(h * scale), 1)
        resized = np.asarray(
            Image.fromarray(image).resize((nw, nh), Image.BILINEAR))
        canvas[y1:y1 + nh, x1:x1 + nw] = resized
        if len(boxes):
            b = np.asarray(boxes, dtype=np.float64).copy()
            b[:, [0, 2]] = b[:, [0, 2]] * (nw / w) + x1
            b[:, [1, 3]] = b[:, [1, 3]] * (nh / h) + y1
            out_boxes.append(b)
            out_labels.append(np.asarray(labels, dtype=np.int64))
    if out_boxes:
        boxes = np.concatenate(out_boxes)
        labels = np.concatenate(out_labels)
    else:
        boxes = np.zeros((0, 4), dtype=np.float64)
        labels = np.zeros((0,), dtype=np.int64)
    keep = (boxes[:, 2] - boxes[:, 0] > 1) & (boxes[:, 3] - boxes[:, 1] > 1)
    return canvas, boxes[keep], labels[keep]


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))
