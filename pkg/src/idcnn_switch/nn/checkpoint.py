"""Versioned binary container for layer parameters.

Layout (all integers little-endian unsigned 32-bit, all values
little-endian IEEE float32)::

    magic        8 bytes  b"IDCNNCKP"
    version      u32      currently 1
    header_len   u32      then header_len bytes of UTF-8 "key=value\\n" lines
    layer_count  u32      then layer_count records
    extra_count  u32      then extra_count records (e.g. optimizer moments)

    record:
      tag        4 ASCII bytes (CONV, BNRM, RELU, SIGM, ADAM, ...)
      n_tensors  u32
      tensor * n_tensors:
        ndim     u32
        dims     ndim * u32
        data     prod(dims) * float32, row-major
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"IDCNNCKP"
VERSION = 1


@dataclass
class Record:
    tag: str
    tensors: list[np.ndarray] = field(default_factory=list)


def _write_record(f, rec: Record) -> None:
    tag = rec.tag.encode("ascii")
    if len(tag) != 4:
        raise ValueError(f"record tag must be 4 ASCII characters, got {rec.tag!r}")
    f.write(tag)
    f.write(struct.pack("<I", len(rec.tensors)))
    for t in rec.tensors:
        t = np.asarray(t)
        f.write(struct.pack("<I", t.ndim))
        f.write(struct.pack(f"<{t.ndim}I", *t.shape))
        f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def write_records(path, header: dict[str, str], layers: list[Record], extras: list[Record] = ()) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    text = "".join(f"{k}={v}\n" for k, v in header.items()).encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(layers)))
    for rec in layers:
        _write_record(buf, rec)
    buf.write(struct.pack("<I", len(extras)))
    for rec in extras:
        _write_record(buf, rec)
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def record(self) -> Record:
        try:
            tag = self.take(4).decode("ascii")
        except UnicodeDecodeError as exc:
            raise FormatError("checkpoint record tag is not ASCII") from exc
        tensors = []
        for _ in range(self.u32()):
            ndim = self.u32()
            if ndim > 8:
                raise FormatError(f"implausible tensor rank {ndim} in checkpoint")
            dims = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
            count = int(np.prod(dims, dtype=np.int64))
            values = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(dims)
            tensors.append(values.astype(np.float32))
        return Record(tag, tensors)


def read_records(path) -> tuple[dict[str, str], list[Record], list[Record]]:
    """Inverse of :func:`write_records`; raises FormatError on any defect."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        text = r.take(r.u32()).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: checkpoint header is not UTF-8") from exc
    header = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}: malformed header line {line!r}")
        header[key] = value
    layers = [r.record() for _ in range(r.u32())]
    extras = [r.record() for _ in range(r.u32())]
    if r.pos != len(r.data):
        raise FormatError(f"{path}: trailing bytes after checkpoint payload")
    return header, layers, extras
