"""Lightweight shunt-matching detector for medical region-of-interest
detection: adaptive downsampling, multipath descriptor fusion,
receptive-field attention convolution, and a four-head detector."""

from .config import (AugmentPolicy, LAEConfig, LossConfig, ModelConfig,
                     MSFMConfig, RFAConfig, TrainConfig)
from .network import LsmYolo, build_model, count_params, decode_boxes
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import DetectionLoss, bce_cls_loss, dfl_loss, siou_loss
from .profiling import estimate_flops, profile_report

__all__ = [
    "AugmentPolicy", "LAEConfig", "LossConfig", "ModelConfig", "MSFMConfig",
    "RFAConfig", "TrainConfig", "LsmYolo", "build_model", "count_params",
    "decode_boxes", "load_checkpoint", "save_checkpoint", "DetectionLoss",
    "bce_cls_loss", "dfl_loss", "siou_loss", "estimate_flops",
    "profile_report",
]
