"""Shared conv building blocks and error types."""

import torch
import torch.nn as nn


class LsmError(Exception):
    """Base class for all package errors; carries a short machine code."""

    code = "error"

    def __str__(self):
        return f"{self.code}: {self.args[0] if self.args else ''}"


class ConfigMismatchError(LsmError):
    code = "config-mismatch"


class OddSpatialDimsError(LsmError):
    code = "odd-spatial-dims"


class InputSizeError(LsmError):
    code = "input-size"


class CorruptCheckpointError(LsmError):
    code = "corrupt-checkpoint"


class DegenerateBoxError(LsmError):
    code = "degenerate-box"


def autopad(k, p=None):
    if p is None:
        p = k // 2
    return p


class Conv(nn.Module):
    """Conv2d + BatchNorm + SiLU, the default stage building unit."""

    def __init__(self, c1, c2, k=1, s=1, p=None, g=1, act=True):
        super().__init__()
        self.conv = nn.Conv2d(c1, c2, k, s, autopad(k, p), groups=g, bias=False)
        self.bn = nn.BatchNorm2d(c2)
        self.act = nn.SiLU() if act else nn.Identity()

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


def check_channels(x: torch.Tensor, expected: int, where: str):
    if x.shape[1] != expected:
        raise ConfigMismatchError(
            f"{where}: got {x.shape[1]} channels, expected {expected}"
        )
