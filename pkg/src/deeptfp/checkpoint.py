"""Binary snapshots of model parameters.

Format: an 8-byte magic, a little-endian u32 format version, a u32
header length, a JSON header with sorted keys, then the raw float64
buffers of every parameter in declaration order.  Writing the same model
twice yields byte-identical files, so checkpoints can be compared with
a plain digest.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .lstm import LstmConfig, LstmModel
from .model import DeepTfpConfig, DeepTfpModel
from .series import DataError, WindowConfig

MAGIC = b"DTFPCKPT"
VERSION = 1


class CheckpointError(DataError):
    pass


def _windows_dict(wc: WindowConfig) -> dict:
    return {"closeness_len": wc.closeness_len, "period_len": wc.period_len,
            "trend_len": wc.trend_len, "period_stride": wc.period_stride,
            "trend_stride": wc.trend_stride}


def _config_dict(model) -> dict:
    c = model.config
    out = {"rows": c.rows, "cols": c.cols, "windows": _windows_dict(c.windows)}
    if model.kind == "deeptfp":
        out.update(feature_maps=c.feature_maps, residual_units=c.residual_units,
                   kernel_size=c.kernel_size, ar_order=c.ar_order)
    else:
        out.update(hidden=c.hidden)
    return out


def _build_model(kind: str, config: dict):
    cfg = dict(config)
    try:
        windows = WindowConfig(**cfg.pop("windows"))
        if kind == "deeptfp":
            return DeepTfpModel(DeepTfpConfig(windows=windows, **cfg))
        if kind == "lstm":
            return LstmModel(LstmConfig(windows=windows, **cfg))
    except (TypeError, DataError) as exc:
        raise CheckpointError(f"checkpoint config does not fit {kind}: {exc}")
    raise CheckpointError(f"unknown model kind {kind!r} in checkpoint")


def save_checkpoint(path, model) -> None:
    params = model.parameters()
    header = {
        "kind": model.kind,
        "config": _config_dict(model),
        "params": [{"name": name, "shape": list(p.shape)} for name, p in params],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, this build reads {VERSION}")
    try:
        header = json.loads(raw[16:16 + header_len])
    except ValueError:
        raise CheckpointError(f"{path}: corrupt header")
    model = _build_model(header["kind"], header["config"])
    params = model.parameters()
    names = [name for name, _ in params]
    stored = [entry["name"] for entry in header["params"]]
    if stored != names:
        raise CheckpointError(f"{path}: parameter list does not match model")
    offset = 16 + header_len
    for entry, (_, p) in zip(header["params"], params):
        shape = tuple(entry["shape"])
        if shape != p.shape:
            raise CheckpointError(
                f"{path}: {entry['name']} has shape {shape}, model expects {p.shape}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated at {entry['name']}")
        p.assign_(np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape))
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return model
