"""Composite detection loss: BCE classification, distribution focal loss on
box-side bins, and SIoU box regression, combined with fixed weights
(0.5, 1.5, 7.5) over task-aligned target assignments."""

import math

import torch
import torch.nn.functional as F

from .common import ConfigMismatchError, DegenerateBoxError
from .config import LossConfig, ModelConfig
from .network import dfl_expectation, grid_centers


def box_iou(a: torch.Tensor, b: torch.Tensor, eps=1e-9) -> torch.Tensor:
    """Pairwise IoU between (..., n, 4) and (..., m, 4) xyxy boxes."""
    lt = torch.maximum(a[..., :, None, :2], b[..., None, :, :2])
    rb = torch.minimum(a[..., :, None, 2:], b[..., None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    area_a = ((a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1]))[..., :, None]
    area_b = ((b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1]))[..., None, :]
    return inter / (area_a + area_b - inter + eps)


def siou_loss(pred: torch.Tensor, target: torch.Tensor, theta=4.0,
              eps=1e-9) -> torch.Tensor:
    """Elementwise SIoU loss between matched (n, 4) xyxy box pairs.

    1 - IoU plus half of the (angle-modulated) distance cost and shape cost.
    Zero for identical boxes, invariant under joint translation.
    """
    tw = target[..., 2] - target[..., 0]
    th = target[..., 3] - target[..., 1]
    if torch.any(tw <= 0) or torch.any(th <= 0):
        raise DegenerateBoxError("target box with non-positive area")
    pw = (pred[..., 2] - pred[..., 0]).clamp(min=eps)
    ph = (pred[..., 3] - pred[..., 1]).clamp(min=eps)

    lt = torch.maximum(pred[..., :2], target[..., :2])
    rb = torch.minimum(pred[..., 2:], target[..., 2:])
    inter = (rb - lt).clamp(min=0).prod(dim=-1)
    union = pw * ph + tw * th - inter
    iou = inter / (union + eps)

    # enclosing box
    cw = torch.maximum(pred[..., 2], target[..., 2]) - torch.minimum(
        pred[..., 0], target[..., 0])
    ch = torch.maximum(pred[..., 3], target[..., 3]) - torch.minimum(
        pred[..., 1], target[..., 1])

    # angle cost from the center offset direction
    s_cw = (target[..., 0] + target[..., 2] - pred[..., 0] - pred[..., 2]) * 0.5
    s_ch = (target[..., 1] + target[..., 3] - pred[..., 1] - pred[..., 3]) * 0.5
    sigma = torch.sqrt(s_cw ** 2 + s_ch ** 2) + eps
    sin_a = (s_ch.abs() / sigma).clamp(0, 1)
    sin_b = (s_cw.abs() / sigma).clamp(0, 1)
    sin_alpha = torch.where(sin_a > math.sin(math.pi / 4), sin_b, sin_a)
    angle_cost = torch.cos(torch.arcsin(sin_alpha) * 2 - math.pi / 2)

    rho_x = (s_cw / (cw + eps)) ** 2
    rho_y = (s_ch / (ch + eps)) ** 2
    gamma = angle_cost - 2
    distance_cost = 2 - torch.exp(gamma * rho_x) - torch.exp(gamma * rho_y)

    omega_w = (pw - tw).abs() / torch.maximum(pw, tw)
    omega_h = (ph - th).abs() / torch.maximum(ph, th)
    shape_cost = ((1 - torch.exp(-omega_w)) ** theta
                  + (1 - torch.exp(-omega_h)) ** theta)

    return 1 - iou + (distance_cost + shape_cost) * 0.5


def dfl_loss(dist_logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Cross-entropy on the two bins bracketing each fractional target.

    dist_logits: (..., reg_max); target: (...) in [0, reg_max - 1].
    """
    reg_max = dist_logits.shape[-1]
    if torch.any(target < 0) or torch.any(target > reg_max - 1):
        raise ConfigMismatchError(
            f"dfl target outside [0, {reg_max - 1}]"
        )
    tl = target.floor().long().clamp(max=reg_max - 2)
    tr = tl + 1
    wl = tr.to(target.dtype) - target
    wr = 1 - wl
    logp = torch.log_softmax(dist_logits, dim=-1)
    return -(wl * logp.gather(-1, tl.unsqueeze(-1)).squeeze(-1)
             + wr * logp.gather(-1, tr.unsqueeze(-1)).squeeze(-1))


def bce_cls_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Elementwise binary cross-entropy on sigmoid(logits)."""
    return F.binary_cross_entropy_with_logits(logits, targets, reduction="none")


def assign_targets(pred_scores, pred_boxes, gt_boxes, gt_labels, centers,
                   cfg: LossConfig):
    """Task-aligned assignment for one image.

    pred_scores: (n, num_classes) probabilities; pred_boxes: (n, 4) xyxy;
    gt_boxes: (m, 4); gt_labels: (m,); centers: (n, 2).
    Returns (fg_mask (n,), gt_index (n,), target_score (n,)) with ties broken
    toward the lower location / ground-truth index.
    """
    n = pred_boxes.shape[0]
    device = pred_boxes.device
    fg = torch.zeros(n, dtype=torch.bool, device=device)
    gt_index = torch.full((n,), -1, dtype=torch.long, device=device)
    t_score = torch.zeros(n, device=device)
    m = gt_boxes.shape[0]
    if m == 0:
        return fg, gt_index, t_score

    inside = ((centers[:, None, 0] >= gt_boxes[None, :, 0])
              & (centers[:, None, 0] <= gt_boxes[None, :, 2])
              & (centers[:, None, 1] >= gt_boxes[None, :, 1])
              & (centers[:, None, 1] <= gt_boxes[None, :, 3]))  # (n, m)
    iou = box_iou(pred_boxes, gt_boxes)  # (n, m)
    cls_score = pred_scores[:, gt_labels]  # (n, m)
    align = cls_score.clamp(min=0) ** cfg.assign_alpha * iou ** cfg.assign_beta
    align = torch.where(inside, align, torch.full_like(align, -1.0))

    # top-k candidates per ground truth, stable toward low location index
    k = min(cfg.assign_topk, n)
    order = torch.argsort(-align, dim=0, stable=True)  # (n, m)
    candidate = torch.zeros_like(align, dtype=torch.bool)
    for j in range(m):
        picks = order[:k, j]
        valid = align[picks, j] >= 0
        candidate[picks[valid], j] = True

    if not candidate.any():
        return fg, gt_index, t_score

    # resolve multi-assignment: highest alignment wins, ties to lower gt index
    masked = torch.where(candidate, align, torch.full_like(align, -1.0))
    best_gt = masked.argmax(dim=1)  # first maximal index on ties
    best_val = masked.gather(1, best_gt.unsqueeze(1)).squeeze(1)
    fg = best_val >= 0
    gt_index = torch.where(fg, best_gt, gt_index)

    # alignment-weighted soft targets, normalized per ground truth
    pos_align = torch.where(fg.unsqueeze(1)
                            & (best_gt.unsqueeze(1)
                               == torch.arange(m, device=device)),
                            align, torch.zeros_like(align))
    max_align = pos_align.amax(dim=0).clamp(min=1e-9)  # (m,)
    pos_iou = torch.where(pos_align > 0, iou, torch.zeros_like(iou))
    max_iou = pos_iou.amax(dim=0)
    norm = pos_align / max_align * max_iou  # (n, m)
    t_score = torch.where(fg, norm.gather(1, best_gt.unsqueeze(1)).squeeze(1),
                          t_score)
    return fg, gt_index, t_score


class DetectionLoss:
    """Computes the weighted composite loss from raw head outputs."""

    def __init__(self, model_cfg: ModelConfig, loss_cfg: LossConfig | None = None):
        self.model_cfg = model_cfg
        self.cfg = loss_cfg or LossConfig(reg_max=model_cfg.reg_max)
        self.cfg.validate()

    def flatten(self, raw):
        """Concatenate per-level outputs into (b, n, ...) tensors."""
        cls_all, dist_all, centers_all, strides_all = [], [], [], []
        for (cls_logits, box_logits), stride in zip(raw, self.model_cfg.head_strides):
            b, nc, h, w = cls_logits.shape
            cls_all.append(cls_logits.view(b, nc, h * w).permute(0, 2, 1))
            dist_all.append(box_logits.view(b, 4, self.model_cfg.reg_max, h * w)
                            .permute(0, 3, 1, 2))
            centers = grid_centers(self.model_cfg.input_size, stride,
                                   cls_logits.device)
            centers_all.append(centers)
            strides_all.append(torch.full((h * w,), float(stride),
                                          device=cls_logits.device))
        return (torch.cat(cls_all, 1), torch.cat(dist_all, 1),
                torch.cat(centers_all, 0), torch.cat(strides_all, 0))

    def __call__(self, raw, gts):
        """gts: list of (boxes (m,4) tensor, labels (m,) tensor) per image."""
        cls_logits, dist_logits, centers, strides = self.flatten(raw)
        b, n, nc = cls_logits.shape
        reg_max = self.model_cfg.reg_max

        offsets = dfl_expectation(dist_logits, reg_max) * strides.view(1, n, 1)
        pred_boxes = torch.cat([centers.unsqueeze(0) - offsets[..., :2],
                                centers.unsqueeze(0) + offsets[..., 2:]], -1)

        cls_targets = torch.zeros_like(cls_logits)
        total_pos = 0
        loss_box = cls_logits.new_zeros(())
        loss_dfl = cls_logits.new_zeros(())
        for i in range(b):
            boxes, labels = gts[i]
            fg, gt_idx, t_score = assign_targets(
                torch.sigmoid(cls_logits[i]).detach(),
                pred_boxes[i].detach(), boxes, labels, centers, self.cfg)
            npos = int(fg.sum())
            total_pos += npos
            if npos == 0:
                continue
            idx = fg.nonzero(as_tuple=True)[0]
            matched = gt_idx[idx]
            cls_targets[i, idx, labels[matched]] = t_score[idx]

            tb = boxes[matched]
            loss_box = loss_box + siou_loss(pred_boxes[i, idx], tb,
                                            theta=self.cfg.siou_theta).sum()

            # box sides as bin offsets, clamped into the representable range
            ltrb = torch.cat([centers[idx] - tb[:, :2],
                              tb[:, 2:] - centers[idx]], dim=-1)
            ltrb = (ltrb / strides[idx].unsqueeze(-1)).clamp(0, reg_max - 1 - 1e-3)
            loss_dfl = loss_dfl + dfl_loss(dist_logits[i, idx], ltrb).mean(-1).sum()

        denom = max(total_pos, 1)
        loss_cls = bce_cls_loss(cls_logits, cls_targets).sum() / denom
        loss_box = loss_box / denom
        loss_dfl = loss_dfl / denom
        total = (self.cfg.cls_weight * loss_cls
                 + self.cfg.dfl_weight * loss_dfl
                 + self.cfg.box_weight * loss_box)
        return total, loss_cls, loss_dfl, loss_box
