"""Parameter checkpoints: JSON header + flat little-endian fp32 payload.

Layout: ``b"LPCK"``, uint32 header length, UTF-8 JSON header, then the fp32
values. The header lists ``{"name", "shape", "offset"}`` per tensor, with the
offset counted in fp32 elements from the start of the payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LPCK"


def save_checkpoint(path, state: dict, meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.reshape(-1))
        offset += arr.size
    header = json.dumps({"tensors": entries, "count": offset, "meta": meta or {}}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for c in chunks:
            f.write(c.tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(state, meta)``; arrays come back as fp32."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen])
    payload = np.frombuffer(raw[8 + hlen:], dtype="<f4")
    if payload.size != header["count"]:
        raise ValueError(f"{path}: payload has {payload.size} values, header says {header['count']}")
    state = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        state[e["name"]] = payload[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    return state, header["meta"]
