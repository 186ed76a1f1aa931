"""Shared checkpoint container: "AIFNET v1".

Layout: one header line, one JSON manifest line (metadata plus an ordered
array table with names and shapes), then the raw little-endian float64 bytes
of every array in manifest order. Round-trips are bit exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"AIFNET v1"


def save_checkpoint(path, meta: dict, arrays: list[tuple[str, np.ndarray]]):
    manifest = {
        "meta": meta,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
    }
    with open(path, "wb") as f:
        f.write(MAGIC + b"\n")
        f.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as f:
        header = f.readline().rstrip(b"\n")
        if header != MAGIC:
            raise FormatError(f"{path}: expected '{MAGIC.decode()}' header, got {header!r}")
        manifest = json.loads(f.readline().decode("utf-8"))
        arrays = {}
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise FormatError(f"{path}: truncated array data for {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return manifest["meta"], arrays
