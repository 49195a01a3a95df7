"""Lightweight adaptive 2x-per-axis downsampling block.

The block regroups each 2x2 pixel neighbourhood into a 5-D view
(batch, channel, h/2, w/2, 4), runs a shared grouped convolution over the
four neighbour slices, and recombines the slices with softmax weights
predicted from the pooled input. The weighted sum is the downsampled output.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .common import ConfigMismatchError, OddSpatialDimsError, check_channels
from .config import LAEConfig


def space_to_depth_regroup(x: torch.Tensor) -> torch.Tensor:
    """(b, c, h, w) -> (b, c, h/2, w/2, 4).

    Slice order along the last axis is row-major within each 2x2 block:
    top-left, top-right, bottom-left, bottom-right.
    """
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddSpatialDimsError(f"spatial dims ({h}, {w}) must be even")
    x = x.view(b, c, h // 2, 2, w // 2, 2)
    # (b, c, h', w', dy, dx) -> flatten (dy, dx) row-major
    return x.permute(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)


def regroup_inverse(x5: torch.Tensor) -> torch.Tensor:
    """Inverse of space_to_depth_regroup; exact (pure permutation)."""
    b, c, h2, w2, n = x5.shape
    if n != 4:
        raise ConfigMismatchError(f"expected 4 neighbour slices, got {n}")
    x = x5.view(b, c, h2, w2, 2, 2).permute(0, 1, 2, 4, 3, 5)
    return x.reshape(b, c, h2 * 2, w2 * 2)


class LightweightExtraction(nn.Module):
    """Grouped conv applied with shared parameters to all 4 neighbour slices.

    With groups=N the parameter count is 1/N of the equivalent standard
    convolution. ``groups=1`` is the ablation fallback (standard conv).
    """

    def __init__(self, c1, c2, k=1, groups=4, bias=False):
        super().__init__()
        if c1 % groups or c2 % groups:
            raise ConfigMismatchError(
                f"channels ({c1}->{c2}) not divisible by groups={groups}"
            )
        self.c1 = c1
        self.conv = nn.Conv2d(c1, c2, k, padding=k // 2, groups=groups, bias=bias)

    def forward(self, x5: torch.Tensor) -> torch.Tensor:
        check_channels(x5, self.c1, "lightweight_extraction")
        b, c, h, w, n = x5.shape
        # fold n into batch so one kernel serves every slice
        flat = x5.permute(0, 4, 1, 2, 3).reshape(b * n, c, h, w)
        out = self.conv(flat)
        return out.view(b, n, -1, h, w).permute(0, 2, 3, 4, 1)


class AdaptiveExtraction(nn.Module):
    """Per-location softmax weights over the 4 neighbour slices.

    Avg-pool 2x2 -> 1x1 conv to 4 logits -> softmax over the slice axis.
    Weights are channel-free: shape (b, 1, h/2, w/2, 4).
    """

    def __init__(self, c1):
        super().__init__()
        self.logits = nn.Conv2d(c1, 4, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] % 2 or x.shape[-1] % 2:
            raise OddSpatialDimsError(
                f"spatial dims {tuple(x.shape[-2:])} must be even"
            )
        pooled = F.avg_pool2d(x, 2, stride=2)
        w = torch.softmax(self.logits(pooled), dim=1)  # (b, 4, h', w')
        return w.permute(0, 2, 3, 1).unsqueeze(1)  # (b, 1, h', w', 4)


class DimensionMapping(nn.Module):
    """Grouped 1x1 projection aligning branch channels with the block output."""

    def __init__(self, c1, c2, groups=4, bias=False):
        super().__init__()
        if c1 % groups or c2 % groups:
            raise ConfigMismatchError(
                f"channels ({c1}->{c2}) not divisible by groups={groups}"
            )
        self.c1 = c1
        self.proj = nn.Conv2d(c1, c2, 1, groups=groups, bias=bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_channels(x, self.c1, "dimension_mapping")
        return self.proj(x)


class LAE(nn.Module):
    """One downsampling unit: halves height and width, maps channels.

    Ablation switches: enable_le swaps the grouped slice conv for a standard
    (ungrouped) one; enable_ae replaces the learned weights with a uniform
    mean over the 4 slices; enable_dm moves the in->out channel mapping into
    a separate grouped 1x1 projection (the slice conv then preserves
    channels); with enable_dm off the slice conv maps channels itself.
    """

    def __init__(self, cfg: LAEConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        branch_out = cfg.in_channels if cfg.enable_dm else cfg.out_channels
        groups = cfg.groups if cfg.enable_le else 1
        self.le = LightweightExtraction(
            cfg.in_channels, branch_out, cfg.kernel_size, groups, cfg.bias
        )
        self.dm = (
            DimensionMapping(cfg.in_channels, cfg.out_channels, cfg.groups, cfg.bias)
            if cfg.enable_dm
            else None
        )
        self.ae = AdaptiveExtraction(cfg.in_channels) if cfg.enable_ae else None

    def branch_slices(self, x: torch.Tensor) -> torch.Tensor:
        """The 5-D branch output before slice weighting."""
        x5 = space_to_depth_regroup(x)
        out = self.le(x5)
        if self.dm is not None:
            b, c, h, w, n = out.shape
            flat = out.permute(0, 4, 1, 2, 3).reshape(b * n, c, h, w)
            out = self.dm(flat).view(b, n, -1, h, w).permute(0, 2, 3, 4, 1)
        return out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_channels(x, self.cfg.in_channels, "lae")
        slices = self.branch_slices(x)
        if self.ae is not None:
            weights = self.ae(x)
            return (slices * weights).sum(dim=-1)
        return slices.mean(dim=-1)
