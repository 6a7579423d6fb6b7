"""Named parameters and flat binary checkpoints."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    trainable: bool = True

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


def make_parameter(name, values, trainable=True):
    return Parameter(name, Tensor(np.asarray(values, dtype=np.float64), requires_grad=trainable),
                     trainable)


def encode_params(params):
    """Serialize ``{name: array}`` records into the checkpoint byte layout.

    Each record: u32 name length, utf-8 name, u32 rank, u64 dims, f64 LE values.
    Records are written in sorted-name order so equal weights give equal bytes.
    """
    chunks = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def decode_params(blob):
    out = {}
    pos = 0
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        out[name] = arr.astype(np.float64)
    return out


def save_checkpoint(path, params, meta=None):
    """Write ``path`` (binary records) and ``path + '.json'`` (manifest with sha256)."""
    blob = encode_params(params)
    digest = hashlib.sha256(blob).hexdigest()
    manifest = {
        "sha256": digest,
        "params": {k: list(np.shape(params[k])) for k in sorted(params)},
        "meta": meta or {},
    }
    _atomic_write(path, blob)
    _atomic_write(path + ".json", json.dumps(manifest, indent=2, sort_keys=True).encode())
    return digest


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    meta = {}
    mpath = path + ".json"
    if os.path.exists(mpath):
        with open(mpath) as fh:
            manifest = json.load(fh)
        if manifest.get("sha256") != hashlib.sha256(blob).hexdigest():
            raise ValueError(f"checkpoint hash mismatch for {path}")
        meta = manifest.get("meta", {})
    return decode_params(blob), meta


def _atomic_write(path, data):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
