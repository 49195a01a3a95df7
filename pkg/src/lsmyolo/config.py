"""Dataclass configs for blocks, model, loss, and training, plus YAML I/O."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import yaml

from .common import ConfigMismatchError


@dataclass
class LAEConfig:
    """Hyperparameters of one lightweight adaptive downsampling unit."""

    in_channels: int
    out_channels: int
    groups: int = 4
    kernel_size: int = 1
    enable_le: bool = True
    enable_ae: bool = True
    enable_dm: bool = True
    bias: bool = False

    def validate(self):
        if self.groups < 1:
            raise ConfigMismatchError("groups must be >= 1")
        if self.kernel_size % 2 != 1:
            raise ConfigMismatchError("kernel_size must be odd")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigMismatchError(
                f"channels ({self.in_channels}->{self.out_channels}) must be "
                f"divisible by groups={self.groups}"
            )


@dataclass
class MSFMConfig:
    """Hyperparameters of one multipath shunt feature-matching unit."""

    channels: int
    with_residual: bool = True
    reduction: int = 2
    enable_spatial: bool = True
    enable_channel: bool = True

    def validate(self):
        if self.channels % 2:
            raise ConfigMismatchError("channels must be even")
        if self.reduction < 1 or self.channels // self.reduction < 4:
            raise ConfigMismatchError(
                f"reduction={self.reduction} too aggressive for "
                f"channels={self.channels}"
            )


@dataclass
class RFAConfig:
    """Hyperparameters of one receptive-field attention convolution."""

    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1

    def validate(self):
        if self.kernel_size % 2 != 1:
            raise ConfigMismatchError("kernel_size must be odd")
        if self.stride not in (1, 2):
            raise ConfigMismatchError("stride must be 1 or 2")


@dataclass
class ModelConfig:
    """Detector topology. Defaults target the ~2.87 M parameter budget."""

    num_classes: int = 3
    input_size: int = 640
    stage_widths: list = field(default_factory=lambda: [24, 48, 96, 192, 384])
    stage_depths: list = field(default_factory=lambda: [1, 1, 1, 1])
    head_strides: list = field(default_factory=lambda: [4, 8, 16, 32])
    head_width: int = 96
    reg_max: int = 16
    use_rfablock: bool = True
    use_lae: bool = True
    use_msfm: bool = True
    lae_groups: int = 4
    lae_enable_le: bool = True
    lae_enable_ae: bool = True
    lae_enable_dm: bool = True
    msfm_reduction: int = 2
    msfm_enable_spatial: bool = True
    msfm_enable_channel: bool = True

    def validate(self):
        if self.input_size % 32:
            raise ConfigMismatchError("input_size must be divisible by 32")
        if len(self.stage_widths) != 5:
            raise ConfigMismatchError("stage_widths must list 5 stage widths")
        if len(self.head_strides) != 4:
            raise ConfigMismatchError("exactly 4 head strides required")
        prev = 0
        for s in self.head_strides:
            if s <= prev or self.input_size % s:
                raise ConfigMismatchError(
                    "head strides must be strictly increasing divisors of "
                    "input_size"
                )
            prev = s
        if self.num_classes < 1 or self.reg_max < 2:
            raise ConfigMismatchError("num_classes >= 1 and reg_max >= 2 required")


@dataclass
class LossConfig:
    """Composite loss weights and target-assigner settings."""

    cls_weight: float = 0.5
    dfl_weight: float = 1.5
    box_weight: float = 7.5
    reg_max: int = 16
    assign_topk: int = 10
    assign_alpha: float = 0.5
    assign_beta: float = 6.0
    siou_theta: float = 4.0

    def validate(self):
        if min(self.cls_weight, self.dfl_weight, self.box_weight) <= 0:
            raise ConfigMismatchError("loss weights must be positive")


@dataclass
class AugmentPolicy:
    hflip_prob: float = 0.5
    scale_jitter: float = 0.10
    hsv_h: float = 0.015
    hsv_s: float = 0.4
    hsv_v: float = 0.3
    mosaic_prob: float = 0.0

    @classmethod
    def identity(cls):
        return cls(hflip_prob=0.0, scale_jitter=0.0, hsv_h=0.0, hsv_s=0.0,
                   hsv_v=0.0, mosaic_prob=0.0)


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 16
    lr: float = 0.01
    final_lr: float = 0.0001
    momentum: float = 0.937
    weight_decay: float = 5e-4
    warmup_epochs: int = 3
    seed: int = 0
    ema_decay: float = 0.9999
    use_ema: bool = False
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    eval_interval: int = 10
    nms_iou: float = 0.7
    score_thr: float = 0.001

    def validate(self):
        if self.epochs < 1:
            raise ConfigMismatchError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigMismatchError("lr must be positive")


def _from_dict(cls, data: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigMismatchError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(data)
    if cls is TrainConfig and isinstance(kwargs.get("augment"), dict):
        kwargs["augment"] = AugmentPolicy(**kwargs["augment"])
    return cls(**kwargs)


def load_model_config(path: str | os.PathLike) -> ModelConfig:
    with open(path) as f:
        cfg = _from_dict(ModelConfig, yaml.safe_load(f) or {})
    cfg.validate()
    return cfg


def load_train_config(path: str | os.PathLike) -> TrainConfig:
    with open(path) as f:
        cfg = _from_dict(TrainConfig, yaml.safe_load(f) or {})
    cfg.validate()
    return cfg


def save_config(cfg, path: str | os.PathLike):
    with open(path, "w") as f:
        yaml.safe_dump(dataclasses.asdict(cfg), f, sort_keys=False)


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def model_config_from_dict(data: dict) -> ModelConfig:
    cfg = _from_dict(ModelConfig, data)
    cfg.validate()
    return cfg
