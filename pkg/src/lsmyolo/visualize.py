"""Detection overlays and gradient-weighted class activation maps."""

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .common import LsmError
from .data import load_image
from .inference import predict_image, preprocess

PALETTE = [(230, 70, 70), (70, 160, 230), (90, 200, 90), (240, 180, 60),
           (180, 90, 220), (60, 210, 200), (230, 120, 180), (150, 150, 80)]


class UnknownLayerError(LsmError):
    code = "unknown-layer"


def draw_detections(image: np.ndarray, boxes, scores, classes,
                    class_names=None) -> Image.Image:
    im = Image.fromarray(image).convert("RGB")
    drawer = ImageDraw.Draw(im)
    for (x1, y1, x2, y2), s, c in zip(boxes, scores, classes):
        color = PALETTE[int(c) % len(PALETTE)]
        drawer.rectangle([x1, y1, x2, y2], outline=color, width=2)
        name = class_names[int(c)] if class_names else f"class_{int(c)}"
        drawer.text((x1 + 2, max(y1 - 12, 0)), f"{name} {s:.2f}", fill=color)
    return im


def detect_to_files(model, image_paths, out_dir, score_thr=0.25,
                    iou_thr=0.7, class_names=None):
    """Annotates copies of the inputs; emits one JSON record per image.

    Unreadable images produce an error record but do not stop the run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for path in image_paths:
        path = Path(path)
        try:
            image = load_image(path)
        except Exception as e:
            records.append({"image": str(path), "error": str(e)})
            continue
        boxes, scores, cls = predict_image(model, image, iou_thr=iou_thr,
                                           score_thr=score_thr)
        im = draw_detections(image, boxes, scores, cls, class_names)
        im.save(out_dir / path.name)
        records.append({
            "image": str(path),
            "detections": [
                {"box": [float(v) for v in b], "score": float(s),
                 "class_id": int(c),
                 "class_name": (class_names[int(c)] if class_names
                                else f"class_{int(c)}")}
                for b, s, c in zip(boxes, scores, cls)
            ],
        })
    with open(out_dir / "detections.json", "w") as f:
        json.dump(records, f, indent=2)
    return records


def cam_layers(model):
    """Neck layer names usable as CAM targets."""
    return ["td2", "td3", "td4", "bu3", "bu4", "bu5"]


def compute_cam(model, image: np.ndarray, layer_name: str,
                class_id: int | None = None) -> np.ndarray:
    """Gradient-weighted activation heatmap in [0, 1] at image resolution.

    Channel weights are the spatial means of the gradients; the map is the
    rectified weighted channel sum, max-normalized.
    """
    valid = cam_layers(model)
    if layer_name not in valid:
        raise UnknownLayerError(
            f"unknown layer {layer_name!r}; valid layers: {', '.join(valid)}")
    model.eval()
    tensor, _ = preprocess(image, model.cfg.input_size)

    captured = {}

    def hook(m, i, o):
        captured["act"] = o
        o.retain_grad()

    handle = getattr(model, layer_name).register_forward_hook(hook)
    try:
        raw = model(tensor)
    finally:
        handle.remove()
    cls_logits = [level[0] for level in raw]
    if class_id is None:
        target = sum(torch.sigmoid(c).amax(dim=1).sum() for c in cls_logits)
    else:
        target = sum(torch.sigmoid(c[:, class_id]).sum() for c in cls_logits)
    model.zero_grad()
    target.backward()

    act = captured["act"][0]
    grad = captured["act"].grad[0]
    weights = grad.mean(dim=(1, 2), keepdim=True)
    heat = torch.relu((weights * act).sum(dim=0))
    heat = heat.detach().numpy()
    if heat.max() > 0:
        heat = heat / heat.max()
    heat_img = Image.fromarray((heat * 255).astype(np.uint8)).resize(
        (image.shape[1], image.shape[0]), Image.BILINEAR)
    return np.asarray(heat_img).astype(np.float32) / 255.0


def _colormap(heat: np.ndarray) -> np.ndarray:
    """Simple blue-to-red map for [0,1] heat values."""
    h = np.clip(heat, 0, 1)
    r = np.clip(1.5 - np.abs(4 * h - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * h - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * h - 1), 0, 1)
    return (np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)


def cam_overlay(model, image: np.ndarray, layer_name: str, out_path,
                class_id: int | None = None, alpha=0.45):
    heat = compute_cam(model, image, layer_name, class_id)
    colored = _colormap(heat)
    blended = (image.astype(np.float32) * (1 - alpha)
               + colored.astype(np.float32) * alpha).astype(np.uint8)
    Image.fromarray(blended).save(out_path)
    return heat
