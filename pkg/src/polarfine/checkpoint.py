"""Flat binary checkpoint format for named parameter arrays.

Layout: 4-byte magic, uint32 version, uint32 manifest byte length, the
UTF-8 manifest, then all values as little-endian float64 in manifest
order. Manifest lines read "name shape offset" where shape is dims
joined by commas ("()" for scalars) and offset counts float64 elements
from the payload start.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"PFCK"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed or mismatched checkpoint files."""


def _shape_token(shape: tuple[int, ...]) -> str:
    if shape == ():
        return "()"
    return ",".join(str(d) for d in shape)


def _parse_shape(token: str) -> tuple[int, ...]:
    if token == "()":
        return ()
    try:
        return tuple(int(d) for d in token.split(","))
    except ValueError as exc:
        raise CheckpointError(f"bad shape token {token!r}") from exc


def save_checkpoint(path: str, arrays: dict[str, np.ndarray]) -> None:
    """Write name->array mapping atomically (tmp file + rename)."""
    lines = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        if any(ch.isspace() for ch in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(f"{name} {_shape_token(arr.shape)} {offset}\n")
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        offset += arr.size
    manifest = "".join(lines).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", VERSION, len(manifest)))
            f.write(manifest)
            for chunk in chunks:
                f.write(chunk)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < 12:
        raise CheckpointError("truncated header")
    version, manifest_len = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    manifest_end = 12 + manifest_len
    if len(blob) < manifest_end:
        raise CheckpointError("truncated manifest")
    manifest = blob[12:manifest_end].decode("utf-8")
    payload = np.frombuffer(blob[manifest_end:], dtype="<f8")

    out: dict[str, np.ndarray] = {}
    for line in manifest.splitlines():
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CheckpointError(f"bad manifest line {line!r}")
        name, shape_tok, off_tok = parts
        shape = _parse_shape(shape_tok)
        offset = int(off_tok)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if offset < 0 or offset + count > payload.size:
            raise CheckpointError(f"manifest entry {name!r} overruns payload")
        if name in out:
            raise CheckpointError(f"duplicate parameter {name!r}")
        out[name] = payload[offset:offset + count].reshape(shape).astype(np.float64)
    return out
