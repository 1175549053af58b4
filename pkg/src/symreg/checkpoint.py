"""SYMREGM1 model checkpoints.

Layout (little-endian)::

    b"SYMREGM1" | u64 header length | JSON header | float32 parameter blobs

The header holds the architecture and a manifest of parameter names and
shapes; blobs follow in manifest order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from symreg.backbone import BackboneConfig
from symreg.errors import FormatError
from symreg.model import build_model

MODEL_MAGIC = b"SYMREGM1"


def checkpoint_bytes(model, extra: Optional[dict] = None) -> bytes:
    params = model.params
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in params.items()]
    header = {"format": MODEL_MAGIC.decode(), "version": 1, "architecture": model.architecture(),
              "parameters": manifest, "dtype": "<f4"}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MODEL_MAGIC, struct.pack("<Q", len(blob)), blob]
    parts += [np.ascontiguousarray(v.data, dtype="<f4").tobytes() for v in params.values()]
    return b"".join(parts)


def save_checkpoint(model, path, extra: Optional[dict] = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, extra))


def parse_checkpoint(buf: bytes):
    """Rebuild the model; returns ``(model, header)``."""
    if len(buf) < 16 or buf[:8] != MODEL_MAGIC:
        raise FormatError(f"bad magic {buf[:8]!r}, expected {MODEL_MAGIC!r}", 0)
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    if 16 + hlen > len(buf):
        raise FormatError(f"header length {hlen} runs past end of file ({len(buf)} bytes)", 8)
    try:
        header = json.loads(buf[16:16 + hlen].decode())
        arch = header["architecture"]
        manifest = header["parameters"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", 16) from exc
    config = BackboneConfig.from_dict(arch["backbone"])
    model = build_model(config, seed=0, unpaired=arch["kind"] == "unpaired",
                        flip_right=arch.get("flip_right", True))
    params = model.params
    names = [m["name"] for m in manifest]
    if sorted(names) != sorted(params):
        raise FormatError("parameter manifest does not match the architecture", 16)
    offset = 16 + hlen
    for entry in manifest:
        shape = tuple(entry["shape"])
        if shape != params[entry["name"]].shape:
            raise FormatError(f"parameter {entry['name']!r} shape {shape} != {params[entry['name']].shape}", 16)
        nbytes = int(np.prod(shape)) * 4
        if offset + nbytes > len(buf):
            raise FormatError(f"truncated blob for parameter {entry['name']!r}", offset)
        values = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        params[entry["name"]].data[...] = values
        offset += nbytes
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after parameter blobs", offset)
    return model, header


def load_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes())
