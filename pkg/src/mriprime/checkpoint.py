"""Checkpoint container: JSON header followed by raw float32 blobs.

Layout::

    8 bytes   magic b"MRIPCKPT"
    8 bytes   header length L, unsigned little-endian
    L bytes   UTF-8 JSON header
    ...       parameter blobs, then optimizer-state blobs, in header order,
              each as little-endian float32, row-major

The header lists ``params`` and ``optimizer.state`` as ``[name, shape]``
pairs; blob sizes follow from the shapes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np

MAGIC = b"MRIPCKPT"
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path,
    params: Mapping[str, np.ndarray],
    *,
    config: dict,
    seed: int,
    epoch: int,
    optimizer: Optional[dict] = None,
    optimizer_state: Optional[Mapping[str, np.ndarray]] = None,
    extra: Optional[dict] = None,
) -> Path:
    """Write a checkpoint. ``params`` order is preserved in the file."""
    path = Path(path)
    header = {
        "format": 1,
        "config": config,
        "seed": int(seed),
        "epoch": int(epoch),
        "params": [[name, list(arr.shape)] for name, arr in params.items()],
        "optimizer": dict(optimizer or {}),
        "extra": extra or {},
    }
    state = dict(optimizer_state or {})
    header["optimizer"]["state"] = [[name, list(arr.shape)] for name, arr in state.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in list(params.values()) + list(state.values()):
            fh.write(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(header, params, optimizer_state)``; arrays are float32."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    offset = 16 + hlen

    def _read(entries) -> Dict[str, np.ndarray]:
        nonlocal offset
        out = {}
        for name, shape in entries:
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 4
            if offset + nbytes > len(raw):
                raise CheckpointError(f"{path}: truncated while reading {name}")
            out[name] = np.frombuffer(raw, dtype=_F32, count=count, offset=offset).reshape(shape).astype(np.float32)
            offset += nbytes
        return out

    params = _read(header["params"])
    state = _read(header.get("optimizer", {}).get("state", []))
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, params, state
