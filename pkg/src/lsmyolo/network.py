"""Detector assembly: backbone (RFA stage + adaptive downsampling +
residual MatchNecks), four-level path-aggregation neck with non-residual
MatchNecks, decoupled DFL heads, and box decoding."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .common import Conv, InputSizeError
from .config import LAEConfig, ModelConfig, RFAConfig
from .lae import LAE
from .msfm import MatchNeck
from .rfa import RFABlock


def _downsample(c1, c2, cfg: ModelConfig) -> nn.Module:
    if cfg.use_lae:
        return LAE(LAEConfig(
            in_channels=c1, out_channels=c2, groups=cfg.lae_groups,
            enable_le=cfg.lae_enable_le, enable_ae=cfg.lae_enable_ae,
            enable_dm=cfg.lae_enable_dm,
        ))
    return Conv(c1, c2, k=3, s=2)


def _fuse(c_in, c_out, cfg: ModelConfig, residual: bool) -> nn.Module:
    if cfg.use_msfm:
        return MatchNeck(c_in, c_out, with_residual=residual,
                         reduction=cfg.msfm_reduction,
                         enable_spatial=cfg.msfm_enable_spatial,
                         enable_channel=cfg.msfm_enable_channel)
    return Conv(c_in, c_out, k=1)


class DetectHead(nn.Module):
    """Decoupled classification / box-distribution branches for one level."""

    def __init__(self, c_in, width, num_classes, reg_max):
        super().__init__()
        self.cls_stem = Conv(c_in, width, k=3)
        self.cls_out = nn.Conv2d(width, num_classes, 1)
        self.reg_stem = Conv(c_in, width, k=3)
        self.reg_out = nn.Conv2d(width, 4 * reg_max, 1)

    def forward(self, x):
        return self.cls_out(self.cls_stem(x)), self.reg_out(self.reg_stem(x))


class LsmYolo(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        w0, w1, w2, w3, w4 = cfg.stage_widths

        self.stem = Conv(3, w0, k=3, s=2)
        if cfg.use_rfablock:
            self.stage0 = RFABlock(RFAConfig(w0, w0, kernel_size=3))
        else:
            self.stage0 = Conv(w0, w0, k=3)

        widths = [w0, w1, w2, w3, w4]
        self.downs = nn.ModuleList()
        self.stages = nn.ModuleList()
        for i in range(4):
            self.downs.append(_downsample(widths[i], widths[i + 1], cfg))
            depth = cfg.stage_depths[i]
            self.stages.append(nn.Sequential(*[
                _fuse(widths[i + 1], widths[i + 1], cfg, residual=True)
                for _ in range(depth)
            ]))

        # top-down path (P5 -> P2)
        self.td4 = _fuse(w4 + w3, w3, cfg, residual=False)
        self.td3 = _fuse(w3 + w2, w2, cfg, residual=False)
        self.td2 = _fuse(w2 + w1, w1, cfg, residual=False)
        # bottom-up path (P2 -> P5)
        self.down3 = Conv(w1, w1, k=3, s=2)
        self.bu3 = _fuse(w1 + w2, w2, cfg, residual=False)
        self.down4 = Conv(w2, w2, k=3, s=2)
        self.bu4 = _fuse(w2 + w3, w3, cfg, residual=False)
        self.down5 = Conv(w3, w3, k=3, s=2)
        self.bu5 = _fuse(w3 + w4, w4, cfg, residual=False)

        hw = cfg.head_width
        self.heads = nn.ModuleList([
            DetectHead(c, min(hw, c), cfg.num_classes, cfg.reg_max)
            for c in (w1, w2, w3, w4)
        ])
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in",
                                        nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
        # bias the class outputs so initial foreground probability is ~0.01
        prior = -math.log((1 - 0.01) / 0.01)
        for head in self.heads:
            nn.init.constant_(head.cls_out.bias, prior)

    def backbone(self, x):
        x = self.stage0(self.stem(x))
        feats = []
        for down, stage in zip(self.downs, self.stages):
            x = stage(down(x))
            feats.append(x)
        return feats  # strides 4, 8, 16, 32

    def neck(self, feats):
        p2, p3, p4, p5 = feats
        t4 = self.td4(torch.cat([F.interpolate(p5, scale_factor=2), p4], 1))
        t3 = self.td3(torch.cat([F.interpolate(t4, scale_factor=2), p3], 1))
        t2 = self.td2(torch.cat([F.interpolate(t3, scale_factor=2), p2], 1))
        n3 = self.bu3(torch.cat([self.down3(t2), t3], 1))
        n4 = self.bu4(torch.cat([self.down4(n3), t4], 1))
        n5 = self.bu5(torch.cat([self.down5(n4), p5], 1))
        return [t2, n3, n4, n5]

    def forward(self, images: torch.Tensor):
        """images: (b, 3, S, S) in [0, 1] -> list of (cls, box) per level."""
        s = self.cfg.input_size
        if images.ndim != 4 or images.shape[2] != s or images.shape[3] != s:
            raise InputSizeError(
                f"expected (b, 3, {s}, {s}), got {tuple(images.shape)}"
            )
        return [head(f) for head, f in zip(self.heads, self.neck(self.backbone(images)))]

    def forward_features(self, images):
        """Neck features plus head outputs, for CAM hooks and debugging."""
        feats = self.neck(self.backbone(images))
        return feats, [head(f) for head, f in zip(self.heads, feats)]


def build_model(cfg: ModelConfig, seed: int | None = None) -> LsmYolo:
    if seed is not None:
        torch.manual_seed(seed)
    return LsmYolo(cfg)


def grid_centers(size, stride, device=None):
    """Cell-center coordinates (in pixels) of one head grid, row-major."""
    n = size // stride
    ax = (torch.arange(n, device=device, dtype=torch.float32) + 0.5) * stride
    gy, gx = torch.meshgrid(ax, ax, indexing="ij")
    return torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=-1)  # (n*n, 2)


def dfl_expectation(box_logits: torch.Tensor, reg_max: int) -> torch.Tensor:
    """(..., 4, reg_max) logits -> (..., 4) expected bin offsets."""
    probs = torch.softmax(box_logits, dim=-1)
    bins = torch.arange(reg_max, device=box_logits.device, dtype=probs.dtype)
    return (probs * bins).sum(dim=-1)


def decode_boxes(raw, cfg: ModelConfig):
    """Raw head outputs -> per-image (boxes, scores, classes), pre-NMS.

    Each side's offset is the expectation of its bin distribution, scaled by
    the level stride and anchored at the cell center.
    """
    device = raw[0][0].device
    b = raw[0][0].shape[0]
    all_boxes, all_scores = [], []
    for (cls_logits, box_logits), stride in zip(raw, cfg.head_strides):
        bb, nc, h, w = cls_logits.shape
        centers = grid_centers(cfg.input_size, stride, device)  # (h*w, 2)
        dist = box_logits.view(bb, 4, cfg.reg_max, h * w).permute(0, 3, 1, 2)
        offsets = dfl_expectation(dist, cfg.reg_max) * stride  # (b, h*w, 4) ltrb
        x1y1 = centers.unsqueeze(0) - offsets[..., 0:2]
        x2y2 = centers.unsqueeze(0) + offsets[..., 2:4]
        all_boxes.append(torch.cat([x1y1, x2y2], dim=-1))
        all_scores.append(torch.sigmoid(cls_logits).view(bb, nc, h * w).permute(0, 2, 1))
    boxes = torch.cat(all_boxes, dim=1).clamp_(0, cfg.input_size)
    scores = torch.cat(all_scores, dim=1)
    return boxes, scores  # (b, n, 4), (b, n, num_classes)


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
