"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic  b"MPACKPT\\0"
    uint32    format version
    uint32    header length H
    H bytes   UTF-8 JSON header (config, vocab, seed, step, tensor table)
    ...       tensor blobs, float32 little-endian, in tensor-table order
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .model import ModelConfig, MPAModel
from .text import Vocabulary

MAGIC = b"MPACKPT\0"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    head: dict = None
    vocab: Vocabulary = None
    seed: int = 0
    step: int = 0
    scale_max: float = None

    def model(self):
        return MPAModel(self.config, self.params, self.head)


def to_bytes(ckpt):
    tensors = list(ckpt.params.items()) + list((ckpt.head or {}).items())
    table, blobs, offset = [], [], 0
    for name, arr in tensors:
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "config": ckpt.config.to_dict(),
        "seed": int(ckpt.seed),
        "step": int(ckpt.step),
        "has_head": ckpt.head is not None,
        "scale_max": ckpt.scale_max,
        "vocab": None if ckpt.vocab is None else {"level": ckpt.vocab.level, "tokens": list(ckpt.vocab.tokens)},
        "tensors": table,
    }
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(head_bytes)) + head_bytes + b"".join(blobs)


def from_bytes(data):
    if len(data) < 16 or data[:8] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    base = 16 + hlen
    params, head = {}, {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = data[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise FormatError(f"truncated checkpoint at tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(entry["shape"])
        (head if entry["name"].startswith("head.") else params)[entry["name"]] = arr
    vocab = header.get("vocab")
    return Checkpoint(
        config=ModelConfig.from_dict(header["config"]),
        params=params,
        head=head if header.get("has_head") else None,
        vocab=None if vocab is None else Vocabulary(vocab["tokens"], vocab["level"]),
        seed=header["seed"],
        step=header["step"],
        scale_max=header.get("scale_max"),
    )


def atomic_write(path, data, mode="wb"):
    """Write via a temp file in the same directory, then rename into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, ckpt):
    atomic_write(path, to_bytes(ckpt))


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
