"""Self-describing parameter checkpoint files.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(model configuration plus ordered parameter paths and shapes), then the raw
row-major float64 parameter data, little-endian, in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .optim import ParameterStore

MAGIC = b"FCWCKPT1"


def save_checkpoint(path: str | Path, params: ParameterStore, config: dict) -> None:
    entries = [{"path": k, "shape": list(t.shape)} for k, t in params.items()]
    header = json.dumps({"config": config, "params": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        store = ParameterStore()
        for entry in header["params"]:
            r, c = entry["shape"]
            raw = fh.read(r * c * 8)
            if len(raw) != r * c * 8:
                raise ValueError(f"{path}: truncated parameter data for {entry['path']}")
            data = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(r, c)
            store.add(entry["path"], data)
    return store, header["config"]
