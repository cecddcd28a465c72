"""MMWS weight container.

Layout (all integers little-endian)::

    magic   b"MMWS"
    version u32 = 1
    count   u32
    count x entry:
        name_len u16, name (UTF-8), ndim u8, dims u64 * ndim, offset u64
    zero padding to the next 64-byte boundary
    payload: float32 little-endian tensors, packed back to back

Offsets are relative to the payload start; tensors are contiguous and cover
the payload exactly.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import BlockGraph, tensor_owners

MAGIC = b"MMWS"
VERSION = 1
ALIGN = 64
_LE_F32 = np.dtype("<f4")


class WeightFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    shape: tuple[int, ...]
    byte_offset: int
    dtype: str = "f32"

    @property
    def nbytes(self) -> int:
        return 4 * int(np.prod(self.shape, dtype=np.int64))


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    head = io.BytesIO()
    head.write(MAGIC)
    head.write(struct.pack("<II", VERSION, len(tensors)))
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=_LE_F32, order="C")  # keeps 0-d shapes
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise WeightFormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise WeightFormatError(f"too many dims for {name}")
        head.write(struct.pack("<H", len(raw)))
        head.write(raw)
        head.write(struct.pack("<B", arr.ndim))
        head.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        head.write(struct.pack("<Q", offset))
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    pad = (-head.tell()) % ALIGN
    head.write(b"\0" * pad)
    return head.getvalue() + b"".join(blobs)


def decode(data: bytes) -> dict[str, np.ndarray]:
    entries, start = read_manifest(data)
    total = sum(e.nbytes for e in entries)
    if len(data) != start + total:
        raise WeightFormatError(
            f"payload is {len(data) - start} bytes, manifest describes {total}"
        )
    out = {}
    for e in entries:
        buf = data[start + e.byte_offset:start + e.byte_offset + e.nbytes]
        out[e.name] = np.frombuffer(buf, dtype=_LE_F32).astype(np.float32).reshape(e.shape)
    return out


def read_manifest(data: bytes) -> tuple[list[ManifestEntry], int]:
    """Parse and validate the header; returns entries and payload start."""
    view = memoryview(data)
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(view):
            raise WeightFormatError("truncated header")
        chunk = bytes(view[pos:pos + n])
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise WeightFormatError("bad magic, not an MMWS file")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise WeightFormatError(f"unsupported MMWS version {version}")
    entries: list[ManifestEntry] = []
    names = set()
    expected = 0
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        (offset,) = struct.unpack("<Q", take(8))
        if name in names:
            raise WeightFormatError(f"duplicate tensor name {name}")
        if offset != expected:
            raise WeightFormatError(f"tensor {name} at offset {offset}, expected {expected}")
        e = ManifestEntry(name, tuple(int(d) for d in dims), offset)
        names.add(name)
        entries.append(e)
        expected += e.nbytes
    start = pos + (-pos) % ALIGN
    return entries, start


def save_tensors(path: str | os.PathLike, tensors: dict[str, np.ndarray]) -> None:
    data = encode(tensors)
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_tensors(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def save_weights(model: BlockGraph, path: str | os.PathLike) -> None:
    save_tensors(path, model.state_dict())


def assign_tensors(model: BlockGraph, tensors: dict[str, np.ndarray]) -> BlockGraph:
    """Copy ``tensors`` into ``model`` by name; validates everything before writing."""
    owners = tensor_owners(model.root)
    missing = [n for n in owners if n not in tensors]
    if missing:
        shown = ", ".join(missing[:10])
        raise WeightFormatError(f"{len(missing)} parameters missing from weights, first: {shown}")
    unexpected = [n for n in tensors if n not in owners]
    if unexpected:
        raise WeightFormatError(f"unknown tensor names in weights, first: {', '.join(unexpected[:10])}")
    for name, (leaf, local) in owners.items():
        want = leaf.tensors()[local].shape
        got = tensors[name].shape
        if tuple(want) != tuple(got):
            raise WeightFormatError(f"shape mismatch for layer {leaf.name} tensor {local}: file {got}, model {want}")
    for name, (leaf, local) in owners.items():
        leaf.set_tensor(local, np.array(tensors[name], dtype=np.float32))
    return model


def load_weights(path: str | os.PathLike, model: BlockGraph) -> BlockGraph:
    """Load an MMWS file into ``model``; on any error the model is left untouched."""
    return assign_tensors(model, load_tensors(path))
