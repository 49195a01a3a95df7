"""Multipath shunt feature matching: fuses per-height, per-width, and
per-channel descriptors of a feature map and reinjects them as multiplicative
attention, wrapped in a split/concat MatchNeck block."""

import torch
import torch.nn as nn

from .common import ConfigMismatchError, Conv, check_channels
from .config import MSFMConfig


def directional_pools(x: torch.Tensor):
    """Return (F_h, F_w, F_c): means over width, height, and both axes."""
    f_h = x.mean(dim=3, keepdim=True)          # (b, c, h, 1)
    f_w = x.mean(dim=2, keepdim=True)          # (b, c, 1, w)
    f_c = x.mean(dim=(2, 3), keepdim=True)     # (b, c, 1, 1)
    return f_h, f_w, f_c


class MSFM(nn.Module):
    """Fusion core operating on a single c-channel stream.

    The height and width descriptors are concatenated into one
    (b, c, h+w, 1) stream, refined by a shared bottleneck transform, and
    split back. Their sigmoid doubles as the matching weights and, averaged
    over the spatial axis, as the channel gate. All attention factors are
    multiplied into the (optionally residual-doubled) input, then the result
    is concatenated with the untouched source and projected back to c
    channels by a 1x1 convolution.
    """

    def __init__(self, cfg: MSFMConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c, mid = cfg.channels, cfg.channels // cfg.reduction
        if cfg.enable_spatial:
            self.transform = nn.Sequential(
                nn.Conv2d(c, mid, 1),
                nn.BatchNorm2d(mid),
                nn.SiLU(),
                nn.Conv2d(mid, c, 1),
            )
        else:
            self.transform = None
        if cfg.enable_channel:
            # learnable per-channel gain on the channel gate, identity at init
            self.channel_scale = nn.Parameter(torch.ones(1, c, 1, 1))
        else:
            self.channel_scale = None
        # normalized output projection keeps the multiplicative factors from
        # compounding across stacked blocks
        self.proj = Conv(2 * c, c, k=1)

    def descriptor_stream(self, f_h, f_w):
        """Shared post-transform logits over the concatenated descriptors.

        Without the spatial branch there is no transform and the raw
        concatenated descriptors serve as the logits.
        """
        stream = torch.cat([f_h, f_w.transpose(2, 3)], dim=2)  # (b, c, h+w, 1)
        return self.transform(stream) if self.transform is not None else stream

    def spatial_match(self, x: torch.Tensor):
        f_h, f_w, _ = directional_pools(x)
        h, w = x.shape[2], x.shape[3]
        t = self.descriptor_stream(f_h, f_w)
        gate = torch.sigmoid(t)
        fh_hat, fw_hat = torch.split(t, [h, w], dim=2)
        weight_h, weight_w = torch.split(gate, [h, w], dim=2)
        return (fh_hat, weight_h, fw_hat.transpose(2, 3),
                weight_w.transpose(2, 3), gate)

    def channel_match(self, f_c: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
        # gate is (b, c, h+w, 1); reduce it to one factor per channel
        out = f_c * gate.mean(dim=2, keepdim=True)
        if self.channel_scale is not None:
            out = out * self.channel_scale
        return out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_channels(x, self.cfg.channels, "msfm")
        res = x + x if self.cfg.with_residual else x
        out = res
        if self.cfg.enable_spatial or self.cfg.enable_channel:
            f_h, f_w, f_c = directional_pools(x)
            t = self.descriptor_stream(f_h, f_w)
            gate = torch.sigmoid(t)
            if self.cfg.enable_channel:
                out = self.channel_match(f_c, gate) * out
            if self.cfg.enable_spatial:
                h, w = x.shape[2], x.shape[3]
                fh_hat, fw_hat = torch.split(t, [h, w], dim=2)
                weight_h, weight_w = torch.split(gate, [h, w], dim=2)
                out = out * (fh_hat * weight_h)
                out = out * (fw_hat.transpose(2, 3) * weight_w.transpose(2, 3))
        return self.proj(torch.cat([x, out], dim=1))


class MatchNeck(nn.Module):
    """Shunt wrapper: split channels, refine one half with MSFM, re-merge.

    The untouched half carries the original features to the final 1x1
    projection, which also sets the block's output width.
    """

    def __init__(self, c_in, c_out, with_residual=True, reduction=2,
                 enable_spatial=True, enable_channel=True):
        super().__init__()
        if c_in % 2:
            raise ConfigMismatchError(f"MatchNeck input channels {c_in} odd")
        self.c_in = c_in
        half = c_in // 2
        self.msfm = MSFM(MSFMConfig(
            channels=half, with_residual=with_residual, reduction=reduction,
            enable_spatial=enable_spatial, enable_channel=enable_channel,
        ))
        self.proj = Conv(c_in, c_out, k=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_channels(x, self.c_in, "match_neck")
        keep, refine = torch.chunk(x, 2, dim=1)
        return self.proj(torch.cat([keep, self.msfm(refine)], dim=1))
