"""``V3DC`` checkpoint files.

Layout: magic ``V3DC``, uint32 format version, uint32 header length, a
canonical JSON header (config, tensor manifest, best validation loss,
epoch, run metadata), then float32 little-endian tensor blobs in manifest
order. All integers are little-endian.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, IoError, ManifestShapeMismatch, TruncatedBlob, VersionMismatch
from .vit3d import Params, Vit3dConfig, param_shapes

CHECKPOINT_MAGIC = b"V3DC"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


@dataclass(eq=False)
class Checkpoint:
    config: Vit3dConfig
    params: Params
    best_val_loss: float = math.inf
    epoch: int = 0
    meta: dict = field(default_factory=dict)


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    manifest, blobs, offset = [], [], 0
    for name, shape in param_shapes(ckpt.config):
        blob = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        if blob.shape != shape:
            raise ManifestShapeMismatch(f"{name} has shape {blob.shape}, expected {shape}")
        raw = blob.tobytes()
        manifest.append({"name": name, "shape": list(shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = canonical_json(
        {
            "config": ckpt.config.to_dict(),
            "tensors": manifest,
            "best_val_loss": float(ckpt.best_val_loss),
            "epoch": int(ckpt.epoch),
            "meta": ckpt.meta,
        }
    )
    return _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)) + header + b"".join(blobs)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"not a checkpoint (magic {bytes(data[:4])!r})")
    if len(data) < _PREFIX.size:
        raise TruncatedBlob("checkpoint prefix is truncated")
    _, version, header_len = _PREFIX.unpack_from(data)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    start = _PREFIX.size + header_len
    if len(data) < start:
        raise TruncatedBlob("checkpoint header is truncated")
    try:
        header = json.loads(data[_PREFIX.size : start].decode("utf-8"))
        config = Vit3dConfig.from_dict(header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestShapeMismatch(f"unreadable checkpoint header: {exc}") from exc

    blob = memoryview(data)[start:]
    params = {}
    for entry in manifest:
        shape = tuple(int(s) for s in entry["shape"])
        need = math.prod(shape) * 4
        if int(entry.get("nbytes", need)) != need:
            raise ManifestShapeMismatch(f"{entry['name']}: {entry['nbytes']} bytes cannot hold shape {shape}")
        offset = int(entry["offset"])
        if offset < 0 or offset + need > len(blob):
            raise TruncatedBlob(f"{entry['name']} needs bytes [{offset}, {offset + need}) of {len(blob)}")
        params[entry["name"]] = np.frombuffer(blob[offset : offset + need], dtype="<f4").reshape(shape).astype(np.float32)

    for name, shape in param_shapes(config):
        if name not in params or params[name].shape != shape:
            got = params[name].shape if name in params else None
            raise ManifestShapeMismatch(f"{name}: manifest shape {got}, config expects {shape}")
    return Checkpoint(config, params, float(header["best_val_loss"]), int(header["epoch"]), header.get("meta", {}))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(encode_checkpoint(ckpt))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return decode_checkpoint(data)
