"""Self-describing checkpoint container.

Layout: one ASCII line ``LSMYOLO1 <header_len>`` followed by a JSON header
(model config + array manifest with name/shape/dtype/offset) and then the
raw little-endian float32 arrays in manifest order.
"""

import json

import numpy as np
import torch

from .common import CorruptCheckpointError
from .config import ModelConfig, model_config_from_dict, model_config_to_dict

MAGIC = b"LSMYOLO1"


def _arrays(model):
    # num_batches_tracked buffers are int64 bookkeeping with no effect on
    # inference (fixed BN momentum); they are not persisted.
    for name, t in model.state_dict().items():
        if name.endswith("num_batches_tracked"):
            continue
        yield name, t


def save_checkpoint(model, path, extra: dict | None = None):
    manifest = []
    blobs = []
    offset = 0
    for name, t in _arrays(model):
        arr = t.detach().cpu().numpy().astype("<f4", copy=False)
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
        })
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = {
        "config": model_config_to_dict(model.cfg),
        "manifest": manifest,
        "data_bytes": offset,
    }
    if extra:
        header["extra"] = extra
    header_bytes = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(MAGIC + b" " + str(len(header_bytes)).encode() + b"\n")
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def read_header(path) -> dict:
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CorruptCheckpointError(f"{path}: {e.strerror or e}")
    with f:
        first = f.readline()
        if not first.startswith(MAGIC + b" "):
            raise CorruptCheckpointError(f"{path}: bad magic")
        try:
            header_len = int(first.split()[1])
        except (IndexError, ValueError):
            raise CorruptCheckpointError(f"{path}: bad header length")
        header_bytes = f.read(header_len)
        if len(header_bytes) != header_len:
            raise CorruptCheckpointError(f"{path}: truncated header")
        try:
            return json.loads(header_bytes)
        except json.JSONDecodeError:
            raise CorruptCheckpointError(f"{path}: unparseable header")


def load_checkpoint(path, device="cpu"):
    """Rebuild the model from a checkpoint file; bit-exact round trip."""
    from .network import build_model

    header = read_header(path)
    try:
        cfg = model_config_from_dict(header["config"])
        manifest = header["manifest"]
        data_bytes = header["data_bytes"]
    except KeyError as e:
        raise CorruptCheckpointError(f"{path}: missing header field {e}")

    with open(path, "rb") as f:
        first = f.readline()
        header_len = int(first.split()[1])
        f.seek(len(first) + header_len)
        data = f.read()
    if len(data) != data_bytes:
        raise CorruptCheckpointError(
            f"{path}: expected {data_bytes} data bytes, found {len(data)}"
        )

    model = build_model(cfg)
    state = dict(model.state_dict())
    loaded = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        name = entry["name"]
        if name not in state:
            raise CorruptCheckpointError(f"{path}: unknown array {name}")
        if tuple(state[name].shape) != shape:
            raise CorruptCheckpointError(
                f"{path}: shape mismatch for {name}: "
                f"{shape} vs {tuple(state[name].shape)}"
            )
        loaded[name] = torch.from_numpy(arr.reshape(shape).copy())
    model.load_state_dict(loaded, strict=False)
    return model.to(device)
