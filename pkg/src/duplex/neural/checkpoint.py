"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"DPXCKPT\\0"
    hlen       uint32    length of the JSON header
    header     hlen bytes UTF-8 JSON: version, task, K, H, model config,
               vocabulary, and an ``arrays`` list of {name, shape, dtype}
    data       the arrays in header order, raw little-endian, C order
    checksum   32 bytes  SHA-256 of everything before it
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..features import EmbeddingTable
from .model import Model, ModelConfig

MAGIC = b"DPXCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TaskMismatchError(CheckpointError):
    pass


def _le(a: np.ndarray) -> np.ndarray:
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def save_checkpoint(model: Model, extra: Optional[dict] = None) -> bytes:
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays["embeddings"] = np.asarray(model.embeddings.matrix)
    arrays["audio_mean"] = model.audio_mean
    arrays["audio_std"] = model.audio_std
    entries, blobs = [], []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(_le(np.asarray(arr)))
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str})
        blobs.append(arr.tobytes())
    cfg = model.config
    header = {
        "version": VERSION,
        "task": cfg.task,
        "K": cfg.n_classes,
        "H": cfg.hidden,
        "config": cfg.to_dict(),
        "tokens": list(model.embeddings.tokens),
        "oov_index": model.embeddings.oov_index,
        "trained": model.trained,
        "arrays": entries,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def load_checkpoint(data: bytes, task: Optional[str] = None) -> Model:
    if len(data) < len(MAGIC) + 4 + 32 or not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch")
    (hlen,) = struct.unpack_from("<I", body, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    if header.get("version") != VERSION:
        raise VersionError(f"unsupported checkpoint version {header.get('version')!r}")
    if task is not None and header["task"] != task:
        raise TaskMismatchError(f"checkpoint is for task {header['task']!r} (K={header['K']}), not {task!r}")

    offset = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        n = int(np.prod(entry["shape"], dtype=np.int64)) * dt.itemsize
        arrays[entry["name"]] = np.frombuffer(body, dtype=dt, count=n // dt.itemsize,
                                              offset=offset).reshape(entry["shape"]).copy()
        offset += n
    if offset != len(body):
        raise CheckpointError("trailing bytes in checkpoint body")

    cfg = ModelConfig(**header["config"])
    table = EmbeddingTable.from_tokens(header["tokens"], arrays["embeddings"])
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    dtype = next(iter(params.values())).dtype.newbyteorder("=")
    model = Model(cfg, table, params, arrays["audio_mean"], arrays["audio_std"], dtype=dtype)
    model.trained = header.get("trained", True)
    return model


def write_checkpoint(model: Model, path, extra: Optional[dict] = None) -> None:
    Path(path).write_bytes(save_checkpoint(model, extra))


def read_checkpoint(path, task: Optional[str] = None) -> Model:
    return load_checkpoint(Path(path).read_bytes(), task)
