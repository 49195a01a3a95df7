"""Parameter and FLOP accounting.

Convention: 1 multiply-accumulate = 2 FLOPs. Convolutions, linear layers,
and elementwise attention products are counted; pooling, activations, and
normalization are ignored.
"""

import torch
import torch.nn as nn

from .lae import LAE
from .msfm import MSFM
from .rfa import RFAConv


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _conv_macs(module: nn.Conv2d, out_shape):
    _, c_out, h, w = out_shape
    k = module.kernel_size[0] * module.kernel_size[1]
    c_in = module.in_channels // module.groups
    return k * c_in * c_out * h * w


def estimate_flops(model, input_size=None) -> int:
    """Total FLOPs of one eval forward at the given square input size."""
    per_module, total = profile_model(model, input_size)
    return total


def profile_model(model, input_size=None):
    """Returns (per-top-level-module FLOPs dict, total FLOPs)."""
    if input_size is None:
        input_size = model.cfg.input_size
    macs = {}  # leaf module name -> MACs

    def add(name, n):
        macs[name] = macs.get(name, 0) + n

    handles = []
    for name, mod in model.named_modules():
        if isinstance(mod, nn.Conv2d):
            handles.append(mod.register_forward_hook(
                lambda m, i, o, name=name: add(name, _conv_macs(m, o.shape))))
        elif isinstance(mod, nn.Linear):
            handles.append(mod.register_forward_hook(
                lambda m, i, o, name=name:
                add(name, m.in_features * o.numel())))
        elif isinstance(mod, LAE):
            # weighted recombination of the 4 neighbour slices
            handles.append(mod.register_forward_hook(
                lambda m, i, o, name=name: add(name + ".combine",
                                               4 * o.numel())))
        elif isinstance(mod, MSFM):
            # up to four broadcast attention products over the full map
            def msfm_hook(m, i, o, name=name):
                factors = 1  # residual/source product with the projection input
                if m.cfg.enable_channel:
                    factors += 1
                if m.cfg.enable_spatial:
                    factors += 2
                add(name + ".products", factors * i[0].numel())
            handles.append(mod.register_forward_hook(msfm_hook))
        elif isinstance(mod, RFAConv):
            def rfa_hook(m, i, o, name=name):
                k2 = m.cfg.kernel_size ** 2
                b, c_out, h, w = o.shape
                c_in = m.cfg.in_channels
                # patch weighting + shared-kernel contraction
                add(name + ".attend", k2 * c_in * h * w * b)
                add(name + ".kernel", k2 * c_in * c_out * h * w * b)
            handles.append(mod.register_forward_hook(rfa_hook))

    was_training = model.training
    orig_size = model.cfg.input_size
    model.eval()
    model.cfg.input_size = input_size
    try:
        with torch.no_grad():
            model(torch.zeros(1, 3, input_size, input_size))
    finally:
        model.cfg.input_size = orig_size
        if was_training:
            model.train()
    for h in handles:
        h.remove()

    top = {}
    for name, n in macs.items():
        key = name.split(".")[0] if name else "root"
        top[key] = top.get(key, 0) + 2 * n
    return top, sum(top.values())


def profile_report(model, input_size=None) -> dict:
    """Params and FLOPs with a per-module breakdown; rows sum to totals."""
    per_flops, total_flops = profile_model(model, input_size)
    per_params = {}
    for name, p in model.named_parameters():
        key = name.split(".")[0]
        per_params[key] = per_params.get(key, 0) + p.numel()
    rows = []
    for key in sorted(set(per_flops) | set(per_params)):
        rows.append({
            "module": key,
            "params": per_params.get(key, 0),
            "flops": per_flops.get(key, 0),
        })
    return {
        "params": count_params(model),
        "params_m": count_params(model) / 1e6,
        "flops": total_flops,
        "gflops": total_flops / 1e9,
        "input_size": input_size or model.cfg.input_size,
        "modules": rows,
    }
