"""Binary checkpoint format.

Layout::

    b"GAINCKPT"                 8-byte magic
    uint32 little-endian        format version
    uint64 little-endian        header length in bytes
    header                      UTF-8 JSON, sorted keys
    payload                     float64 little-endian, row-major, in header order

The header lists each parameter's name, shape and element offset, plus the
RNG seed and any caller metadata. Writing is byte-deterministic.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import CheckpointError

MAGIC = b"GAINCKPT"
FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, np.ndarray],
    seed: int,
    meta: Mapping[str, Any] | None = None,
) -> None:
    entries = []
    offset = 0
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "params": entries,
        "meta": dict(meta or {}),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for name in sorted(params):
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(params, header)``; raises :class:`CheckpointError` on corruption."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start : start + hlen].decode("utf-8"))
    payload = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        chunk = payload[entry["offset"] : entry["offset"] + n]
        if chunk.size != n:
            raise CheckpointError(f"{path}: truncated data for {entry['name']}")
        params[entry["name"]] = chunk.astype(np.float64).reshape(shape)
    return params, header
