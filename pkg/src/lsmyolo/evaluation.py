"""Post-processing and COCO-protocol average precision.

AP uses 101-point interpolated precision over IoU thresholds 0.50:0.05:0.95
with the standard small/medium/large area buckets.
"""

import json

import numpy as np

IOU_THRESHOLDS = np.round(np.arange(0.5, 1.0, 0.05), 2)
AREA_RANGES = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, float("inf")),
}
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU between (n, 4) and (m, 4) xyxy arrays."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)


def nms(boxes, scores, classes, iou_thr=0.7, score_thr=0.001):
    """Greedy per-class suppression, deterministic: descending score with
    ties broken by the lower box index. Returns kept indices."""
    boxes = np.asarray(boxes, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.asarray(classes)
    keep_mask = scores >= score_thr
    idx = np.nonzero(keep_mask)[0]
    # stable sort on -score keeps lower indices first among ties
    idx = idx[np.argsort(-scores[idx], kind="stable")]
    kept = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for i in idx:
        if suppressed[i]:
            continue
        kept.append(i)
        rest = idx[(classes[idx] == classes[i]) & ~suppressed[idx] & (idx != i)]
        if len(rest):
            ious = iou_matrix(boxes[[i]], boxes[rest])[0]
            suppressed[rest[ious > iou_thr]] = True
        suppressed[i] = True
    return np.array(kept, dtype=np.int64)


def _match_image(det_boxes, det_scores, gt_boxes, gt_ignore, thr):
    """Greedy COCO matching for one image and class at one IoU threshold.

    Returns (tp flags, matched-ignore flags) aligned with detections sorted
    by descending score (caller pre-sorts).
    """
    n, m = len(det_boxes), len(gt_boxes)
    tp = np.zeros(n, dtype=bool)
    ignored = np.zeros(n, dtype=bool)
    if m == 0:
        return tp, ignored
    ious = iou_matrix(det_boxes, gt_boxes)
    taken = np.zeros(m, dtype=bool)
    for d in range(n):
        best, best_iou = -1, thr
        for g in range(m):
            if taken[g]:
                continue
            if ious[d, g] >= best_iou and (best < 0 or ious[d, g] > best_iou):
                best, best_iou = g, ious[d, g]
        if best >= 0:
            taken[best] = True
            if gt_ignore[best]:
                ignored[d] = True
            else:
                tp[d] = True
    return tp, ignored


def compute_ap(detections, ground_truths, iou_thresholds=None,
               area_range=(0.0, float("inf")), num_classes=None):
    """Average precision over a detection corpus.

    detections: {image_id: (boxes, scores, classes)} with numpy arrays;
    ground_truths: {image_id: (boxes, classes)}.
    Returns mean AP over classes and thresholds (classes with no ground
    truth anywhere are skipped, COCO style).
    """
    if iou_thresholds is None:
        iou_thresholds = IOU_THRESHOLDS
    lo, hi = area_range
    image_ids = sorted(set(detections) | set(ground_truths))
    if num_classes is None:
        cls = set()
        for img in image_ids:
            if img in ground_truths:
                cls.update(np.asarray(ground_truths[img][1]).tolist())
        num_classes = (max(cls) + 1) if cls else 0

    per_class = {}
    for c in range(num_classes):
        has_gt = False
        aps = []
        for thr in iou_thresholds:
            scores_all, tp_all, n_gt = [], [], 0
            for img in image_ids:
                gb, gc = ground_truths.get(img, (np.zeros((0, 4)), np.zeros(0)))
                gb = np.asarray(gb, dtype=np.float64).reshape(-1, 4)
                gc = np.asarray(gc)
                gsel = gc == c
                g = gb[gsel]
                g_area = (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])
                g_ignore = ~((g_area >= lo) & (g_area < hi))
                n_gt += int((~g_ignore).sum())

                db, ds, dc = detections.get(
                    img, (np.zeros((0, 4)), np.zeros(0), np.zeros(0)))
                db = np.asarray(db, dtype=np.float64).reshape(-1, 4)
                ds = np.asarray(ds, dtype=np.float64)
                dc = np.asarray(dc)
                dsel = dc == c
                db, ds = db[dsel], ds[dsel]
                order = np.argsort(-ds, kind="stable")
                db, ds = db[order], ds[order]

                tp, ignored = _match_image(db, ds, g, g_ignore, thr)
                # unmatched detections outside the area range are ignored too
                d_area = (db[:, 2] - db[:, 0]) * (db[:, 3] - db[:, 1])
                out_of_range = ~tp & ~((d_area >= lo) & (d_area < hi))
                use = ~(ignored | out_of_range)
                scores_all.append(ds[use])
                tp_all.append(tp[use])
            if n_gt > 0:
                has_gt = True
            aps.append(_ap_from_matches(np.concatenate(scores_all),
                                        np.concatenate(tp_all), n_gt))
        if has_gt:
            per_class[c] = float(np.mean(aps))
    if not per_class:
        return 0.0, {}
    return float(np.mean(list(per_class.values()))), per_class


def _ap_from_matches(scores, tp, n_gt):
    if n_gt == 0:
        return np.nan
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = tp[order]
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
    # precision envelope, then 101-point interpolation
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    interp = np.zeros_like(RECALL_POINTS)
    # 1e-9 slack so recall values that should equal a grid point are not
    # excluded by floating-point representation of the grid
    inds = np.searchsorted(recall, RECALL_POINTS - 1e-9, side="left")
    valid = inds < len(precision)
    interp[valid] = precision[inds[valid]]
    return float(interp.mean())


def _nanmean(values):
    vals = [v for v in values if not np.isnan(v)]
    return float(np.mean(vals)) if vals else 0.0


def summarize(detections, ground_truths, num_classes=None):
    """Full metric table: ap, ap50, ap_s, ap_m, ap_l, per-class AP."""
    ap, per_class = compute_ap(detections, ground_truths,
                               num_classes=num_classes)
    ap50, _ = compute_ap(detections, ground_truths,
                         iou_thresholds=np.array([0.5]),
                         num_classes=num_classes)
    buckets = {}
    for name in ("small", "medium", "large"):
        buckets[name], _ = compute_ap(detections, ground_truths,
                                      area_range=AREA_RANGES[name],
                                      num_classes=num_classes)
    return {
        "ap": ap,
        "ap50": ap50,
        "ap_s": buckets["small"],
        "ap_m": buckets["medium"],
        "ap_l": buckets["large"],
        "per_class": {int(k): float(v) for k, v in per_class.items()},
    }


def write_report(metrics: dict, path):
    with open(path, "w") as f:
        json.dump(metrics, f, indent=2)


def format_table(metrics: dict, class_names=None) -> str:
    lines = ["metric      value",
             "----------  ------"]
    for key in ("ap", "ap50", "ap_s", "ap_m", "ap_l"):
        lines.append(f"{key:<10}  {metrics[key]:.4f}")
    for cid, val in sorted(metrics.get("per_class", {}).items()):
        name = class_names[cid] if class_names else f"class_{cid}"
        lines.append(f"{name:<10}  {val:.4f}")
    return "\n".join(lines)
