"""Receptive-field attention convolution: each output location re-weights
the k*k values in its receptive field with a per-location softmax before the
shared kernel is applied."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .common import check_channels
from .config import RFAConfig


class RFAConv(nn.Module):
    def __init__(self, cfg: RFAConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        k = cfg.kernel_size
        self.attn_logits = nn.Conv2d(cfg.in_channels, k * k, 1)
        # shared kernel, applied to the attention-weighted patches
        self.weight = nn.Parameter(
            torch.empty(cfg.out_channels, cfg.in_channels, k * k)
        )
        self.bias = nn.Parameter(torch.zeros(cfg.out_channels))
        nn.init.kaiming_uniform_(self.weight, a=5 ** 0.5)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Per-location softmax over the k*k receptive-field positions."""
        k, s = self.cfg.kernel_size, self.cfg.stride
        pooled = F.avg_pool2d(x, k, stride=s, padding=k // 2,
                              count_include_pad=False)
        return torch.softmax(self.attn_logits(pooled), dim=1)  # (b, k*k, h', w')

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_channels(x, self.cfg.in_channels, "rfa_conv")
        k, s = self.cfg.kernel_size, self.cfg.stride
        b = x.shape[0]
        patches = F.unfold(x, k, padding=k // 2, stride=s)  # (b, c*k*k, L)
        attn = self.attention(x)
        h2, w2 = attn.shape[2], attn.shape[3]
        patches = patches.view(b, self.cfg.in_channels, k * k, h2 * w2)
        weighted = patches * attn.view(b, 1, k * k, h2 * w2)
        out = torch.einsum("bckl,ock->bol", weighted, self.weight)
        return out.view(b, -1, h2, w2) + self.bias.view(1, -1, 1, 1)


class RFABlock(nn.Module):
    """Backbone stage: RFA convolution + BatchNorm + SiLU."""

    def __init__(self, cfg: RFAConfig):
        super().__init__()
        self.rfa = RFAConv(cfg)
        self.bn = nn.BatchNorm2d(cfg.out_channels)
        self.act = nn.SiLU()

    def forward(self, x):
        return self.act(self.bn(self.rfa(x)))
