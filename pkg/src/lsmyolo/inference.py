"""Model inference over datasets and single images: letterbox, forward,
decode, NMS, and mapping detections back to original image coordinates."""

import numpy as np
import torch

from . import evaluation
from .data import GroundTruthSet, letterbox, load_image
from .network import decode_boxes


def preprocess(image: np.ndarray, input_size: int):
    boxed, _, tfm = letterbox(image, np.zeros((0, 4)), target=input_size)
    tensor = torch.from_numpy(boxed.astype(np.float32) / 255.0)
    return tensor.permute(2, 0, 1).unsqueeze(0), tfm


def predict_image(model, image: np.ndarray, iou_thr=0.7, score_thr=0.001,
                  max_det=300):
    """Returns (boxes xyxy in original pixels, scores, class ids)."""
    model.eval()
    tensor, tfm = preprocess(image, model.cfg.input_size)
    with torch.no_grad():
        raw = model(tensor)
        boxes, scores = decode_boxes(raw, model.cfg)
    boxes = boxes[0].numpy()
    scores = scores[0].numpy()
    cls = scores.argmax(axis=1)
    conf = scores[np.arange(len(cls)), cls]
    keep = evaluation.nms(boxes, conf, cls, iou_thr=iou_thr,
                          score_thr=score_thr)[:max_det]
    out_boxes = tfm.invert(boxes[keep])
    h, w = image.shape[:2]
    out_boxes[:, [0, 2]] = out_boxes[:, [0, 2]].clip(0, w)
    out_boxes[:, [1, 3]] = out_boxes[:, [1, 3]].clip(0, h)
    return out_boxes, conf[keep], cls[keep]


def evaluate_model(model, dataset: GroundTruthSet, iou_thr=0.7,
                   score_thr=0.001):
    """COCO-style metric table over a loaded ground-truth set."""
    detections, ground_truths = {}, {}
    for rec in dataset:
        image = load_image(rec.path)
        boxes, scores, cls = predict_image(model, image, iou_thr=iou_thr,
                                           score_thr=score_thr)
        detections[rec.image_id] = (boxes, scores, cls)
        ground_truths[rec.image_id] = (rec.boxes, rec.labels)
    return evaluation.summarize(detections, ground_truths,
                                num_classes=len(dataset.class_names))
