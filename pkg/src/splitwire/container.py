"""Binary tensor container ("SWNT") for FP32 and quantized INT8 weights.

Layout, all little-endian:

    magic "SWNT" | u16 version=1 | u32 entry_count
    per entry:
      u16 name_len | name bytes (utf-8)
      u8 dtype (0=FP32, 1=INT8) | u8 rank | u32 dims[rank]
      FP32: raw float32 payload
      INT8: f32 t_min | f32 t_max | u32 range_lp | u8 codes payload

Graph weights are stored as "<layer>.weight" / "<layer>.bias" entries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .graph_ir import DataType

MAGIC = b"SWNT"
VERSION = 1
_DTYPE_CODES = {DataType.FP32: 0, DataType.INT8: 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class ContainerEntry:
    name: str
    dtype: DataType
    array: np.ndarray  # float32 for FP32 entries, uint8 codes for INT8
    t_min: float | None = None
    t_max: float | None = None
    range_lp: int | None = None


def save_container(path, entries: list[ContainerEntry]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<4sHI", MAGIC, VERSION, len(entries)))
        for e in entries:
            name_b = e.name.encode("utf-8")
            dims = e.array.shape if e.array.ndim else (1,)
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<BB", _DTYPE_CODES[e.dtype], len(dims)))
            f.write(struct.pack(f"<{len(dims)}I", *dims))
            if e.dtype is DataType.FP32:
                f.write(np.ascontiguousarray(e.array, dtype="<f4").tobytes())
            else:
                if e.t_min is None or e.t_max is None or e.range_lp is None:
                    raise ValueError(f"entry {e.name!r}: INT8 entries need t_min/t_max/range_lp")
                f.write(struct.pack("<ffI", e.t_min, e.t_max, e.range_lp))
                f.write(np.ascontiguousarray(e.array, dtype=np.uint8).tobytes())


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise ParseError(f"{self.path}: truncated container at byte {self.pos}")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.buf):
            raise ParseError(f"{self.path}: truncated container at byte {self.pos}")
        out = self.buf[self.pos : self.pos + size]
        self.pos += size
        return out


def load_container(path) -> dict[str, ContainerEntry]:
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    magic, version, count = r.take("<4sHI")
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ParseError(f"{path}: unsupported container version {version}")
    entries: dict[str, ContainerEntry] = {}
    for _ in range(count):
        (name_len,) = r.take("<H")
        name = r.raw(name_len).decode("utf-8")
        code, rank = r.take("<BB")
        if code not in _CODE_DTYPES:
            raise ParseError(f"{path}: entry {name!r} has unknown dtype code {code}")
        dims = r.take(f"<{rank}I") if rank else (1,)
        n = int(np.prod(dims))
        if code == 0:
            arr = np.frombuffer(r.raw(4 * n), dtype="<f4").reshape(dims).copy()
            entries[name] = ContainerEntry(name, DataType.FP32, arr)
        else:
            t_min, t_max, range_lp = r.take("<ffI")
            arr = np.frombuffer(r.raw(n), dtype=np.uint8).reshape(dims).copy()
            entries[name] = ContainerEntry(name, DataType.INT8, arr, float(t_min), float(t_max), int(range_lp))
    if r.pos != len(r.buf):
        raise ParseError(f"{path}: {len(r.buf) - r.pos} trailing bytes after last entry")
    return entries


def save_graph_weights(path, net) -> None:
    """Write a graph's FP32 weights as <layer>.weight / <layer>.bias entries."""
    entries = []
    for layer in net.layers:
        if not layer.parametric:
            continue
        w = net.weights[layer.name]
        entries.append(ContainerEntry(f"{layer.name}.weight", DataType.FP32, w["weight"]))
        entries.append(ContainerEntry(f"{layer.name}.bias", DataType.FP32, w["bias"]))
    save_container(path, entries)


def attach_weights(net, entries: dict[str, ContainerEntry]) -> None:
    """Bind FP32 container entries to a graph, checking shapes."""
    from .errors import ValidationError

    for layer in net.layers:
        if not layer.parametric:
            continue
        wkey, bkey = f"{layer.name}.weight", f"{layer.name}.bias"
        if wkey not in entries or bkey not in entries:
            raise ValidationError(f"weights container lacks entries for layer {layer.name!r}")
        w, b = entries[wkey], entries[bkey]
        if w.dtype is not DataType.FP32 or b.dtype is not DataType.FP32:
            raise ValidationError(f"layer {layer.name!r}: graph weights must be FP32 entries")
        if tuple(w.array.shape) != layer.weight_shape.dims:
            raise ValidationError(
                f"layer {layer.name!r}: weight shape {w.array.shape} != expected {layer.weight_shape.dims}"
            )
        if tuple(b.array.shape) != layer.bias_shape.dims:
            raise ValidationError(
                f"layer {layer.name!r}: bias shape {b.array.shape} != expected {layer.bias_shape.dims}"
            )
        net.weights[layer.name] = {"weight": w.array.astype(np.float32), "bias": b.array.astype(np.float32)}
