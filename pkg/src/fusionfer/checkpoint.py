"""Versioned binary checkpoints for :class:`~fusionfer.fusion.FusionModel`.

Layout, all little-endian::

    b"FFCK"  u32 version
    u32 config_len, config as compact sorted-key JSON (UTF-8)
    u32 n_tensors
    per tensor: u16 name_len, name, u8 ndim, u32 * ndim shape, float64 data

Writing the same model twice yields identical bytes.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from fusionfer._io import atomic_write_bytes
from fusionfer.fusion import KEYGEN_LAYERS, FusionConfig, FusionModel

MAGIC = b"FFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_block(cfg: FusionConfig) -> dict:
    return {
        "d_model": cfg.d_model,
        "n_heads": cfg.n_heads,
        "strategy": cfg.strategy,
        "hidden": cfg.hidden,
        "n_classes": cfg.n_classes,
        "keygen_layers": cfg.keygen_layers,
    }


def dumps(model: FusionModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = json.dumps(config_block(model.config), sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(model.params)))
    for name, arr in model.params.items():
        b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(b)))
        buf.write(b)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> FusionModel:
    if data[:4] != MAGIC:
        raise CheckpointError("not a fusion checkpoint (bad magic)")
    try:
        (version,) = struct.unpack_from("<I", data, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack_from("<I", data, 8)
        off = 12
        meta = json.loads(data[off : off + clen].decode("utf-8"))
        off += clen
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint ({exc})") from exc
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes in checkpoint")
    strategy = meta.get("strategy")
    if meta.get("keygen_layers") != KEYGEN_LAYERS.get(strategy):
        raise CheckpointError(
            f"checkpoint records {meta.get('keygen_layers')} key-generator layers for strategy {strategy!r}"
        )
    cfg = FusionConfig(meta["d_model"], meta["n_heads"], strategy, meta["hidden"], meta["n_classes"])
    try:
        return FusionModel(cfg, params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc


def save_checkpoint(model: FusionModel, path) -> None:
    atomic_write_bytes(path, dumps(model))


def load_checkpoint(path) -> FusionModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
