"""Checkpoint container: named float arrays in one self-describing binary file.

Layout, all little-endian:

    bytes 0..3    magic ``MCFK``
    bytes 4..7    format version (u32), currently 1
    bytes 8..11   manifest length in bytes (u32)
    manifest      UTF-8 JSON: [{"name", "dtype", "shape", "offset"}, ...]
                  with byte offsets into the payload
    payload       raw C-order array bytes, concatenated

Arrays are written and restored bit-exactly; the round trip is the identity
on every finite and non-finite float pattern.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ContractError, IntegrityError

MAGIC = b"MCFK"
VERSION = 1
_DTYPES = {"<f4", "<f8"}


def save_arrays(path, named: list[tuple[str, np.ndarray]]) -> None:
    """Write ``(name, array)`` pairs; order is preserved in the manifest."""
    seen = set()
    entries = []
    chunks = []
    offset = 0
    for name, arr in named:
        if name in seen:
            raise ContractError(f"duplicate checkpoint entry {name!r}")
        seen.add(name)
        dtype = arr.dtype.newbyteorder("<").str
        if dtype not in _DTYPES:
            raise ContractError(f"{name!r} has unsupported dtype {arr.dtype}")
        data = np.ascontiguousarray(arr).astype(dtype, copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": offset,
        })
        chunks.append(data)
        offset += len(data)
    manifest = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(manifest).to_bytes(4, "little"))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> array dict (insertion-ordered)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise IntegrityError(f"{path}: bad magic {blob[:4]!r}, not a checkpoint")
    version = int.from_bytes(blob[4:8], "little")
    if version != VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {version}")
    man_len = int.from_bytes(blob[8:12], "little")
    manifest = json.loads(blob[12:12 + man_len].decode("utf-8"))
    payload = blob[12 + man_len:]
    out: dict[str, np.ndarray] = {}
    for entry in manifest:
        dtype = entry["dtype"]
        if dtype not in _DTYPES:
            raise IntegrityError(f"{path}: entry {entry['name']!r} has dtype {dtype}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        stop = start + count * np.dtype(dtype).itemsize
        if stop > len(payload):
            raise IntegrityError(f"{path}: entry {entry['name']!r} overruns the payload")
        arr = np.frombuffer(payload[start:stop], dtype=dtype).reshape(shape).copy()
        out[entry["name"]] = arr
    return out


def save_model(path, model) -> None:
    save_arrays(path, [(name, t.data) for name, t in model.named_parameters()])


def load_model(path, model) -> None:
    """Restore parameters in place; names, shapes, and dtypes must all match."""
    stored = load_arrays(path)
    params = dict(model.named_parameters())
    missing = set(params) - set(stored)
    extra = set(stored) - set(params)
    if missing or extra:
        raise IntegrityError(
            f"{path}: parameter names differ from the model "
            f"(missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
    for name, tensor in params.items():
        arr = stored[name]
        if arr.shape != tensor.data.shape:
            raise IntegrityError(
                f"{path}: {name} has shape {arr.shape}, model wants {tensor.data.shape}")
        if arr.dtype != tensor.data.dtype:
            raise IntegrityError(
                f"{path}: {name} has dtype {arr.dtype}, model wants {tensor.data.dtype}")
        tensor.data = arr
