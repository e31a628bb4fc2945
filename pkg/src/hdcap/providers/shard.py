"""HDSH shard files: pre-extracted learn records for offline learning.

Layout (everything little-endian):

    offset 0, 64-byte header:
        magic        4s   b"HDSH"
        version      u32  (currently 1)
        n_p          u32  patches per image
        d_I          u32  patch feature width
        d_C          u32  hidden state width
        record_count u64
        (zero padding to 64 bytes)
    records, back to back, each:
        u64 body length, then body:
            u32 n_c
            n_c  x u32         token ids
            n_p * d_I x f32    patch features, row-major
            n_c * d_C x f32    hidden states, row-major
    tail:
        record_count x u64     file offset of each record's length prefix
        u64                    offset of that index table

The tail index makes records independently seekable; floats round-trip
bit-exactly.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from hdcap.encoders import CaptionHiddenStates, PatchFeatures
from hdcap.errors import DataError
from hdcap.learner import LearnRecord

MAGIC = b"HDSH"
FORMAT_VERSION = 1
HEADER_SIZE = 64
_HEADER = struct.Struct("<4sIIIIQ")


@dataclass(frozen=True)
class ShardInfo:
    path: str
    n_p: int
    d_i: int
    d_c: int
    record_count: int


class ShardWriter:
    """Streams records to one shard; finalizes header and index on close."""

    def __init__(self, path: str, n_p: int, d_i: int, d_c: int):
        self.path = path
        self.n_p = n_p
        self.d_i = d_i
        self.d_c = d_c
        self._offsets: list[int] = []
        self._fh = open(path, "wb")
        self._fh.write(b"\x00" * HEADER_SIZE)

    def append(self, record: LearnRecord) -> None:
        if record.patches.data.shape != (self.n_p, self.d_i):
            raise DataError(f"patch shape {record.patches.data.shape} != ({self.n_p}, {self.d_i})")
        if record.hidden.d_c != self.d_c:
            raise DataError(f"hidden width {record.hidden.d_c} != {self.d_c}")
        n_c = record.hidden.n_c
        ids = np.asarray(record.token_ids, dtype="<u4")
        patches = np.ascontiguousarray(record.patches.data, dtype="<f4")
        hidden = np.ascontiguousarray(record.hidden.data, dtype="<f4")
        body = struct.pack("<I", n_c) + ids.tobytes() + patches.tobytes() + hidden.tobytes()
        self._offsets.append(self._fh.tell())
        self._fh.write(struct.pack("<Q", len(body)))
        self._fh.write(body)

    def close(self) -> None:
        if self._fh is None:
            return
        index_offset = self._fh.tell()
        self._fh.write(np.asarray(self._offsets, dtype="<u8").tobytes())
        self._fh.write(struct.pack("<Q", index_offset))
        self._fh.seek(0)
        self._fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, self.n_p, self.d_i,
                                    self.d_c, len(self._offsets)).ljust(HEADER_SIZE, b"\x00"))
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._fh.close()
        self._fh = None

    def __enter__(self) -> "ShardWriter":
        return self

    def __exit__(self, exc_type, *exc) -> None:
        if exc_type is None:
            self.close()
        elif self._fh is not None:
            self._fh.close()
            self._fh = None


def write_shard(path: str, records: Sequence[LearnRecord], n_p: int, d_i: int, d_c: int) -> int:
    with ShardWriter(path, n_p, d_i, d_c) as w:
        for record in records:
            w.append(record)
    return len(records)


def shard_info(path: str) -> ShardInfo:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise DataError(f"{path}: truncated shard header")
    magic, version, n_p, d_i, d_c, count = _HEADER.unpack(raw[: _HEADER.size])
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported shard version {version}")
    return ShardInfo(path, n_p, d_i, d_c, count)


def read_shard(
    path: str,
    start: int = 0,
    expected_dims: tuple[int, int, int] | None = None,
) -> Iterator[LearnRecord]:
    """Yield LearnRecords in file order, optionally starting mid-shard.

    expected_dims (n_p, d_I, d_C), when given, is validated against the
    header before any record is decoded.
    """
    info = shard_info(path)
    if expected_dims is not None and (info.n_p, info.d_i, info.d_c) != tuple(expected_dims):
        raise DataError(
            f"{path}: shard dims (n_p={info.n_p}, d_I={info.d_i}, d_C={info.d_c}) "
            f"do not match configured dims {tuple(expected_dims)}"
        )
    if not 0 <= start <= info.record_count:
        raise DataError(f"{path}: start record {start} outside [0, {info.record_count}]")
    patch_bytes = info.n_p * info.d_i * 4
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        if start:
            fh.seek(-8, os.SEEK_END)
            (index_offset,) = struct.unpack("<Q", fh.read(8))
            fh.seek(index_offset + 8 * start)
            (first,) = struct.unpack("<Q", fh.read(8))
            fh.seek(first)
        for n in range(start, info.record_count):
            offset = fh.tell()
            head = fh.read(8)
            if len(head) < 8:
                raise DataError(f"{path}: truncated record {n} at offset {offset}")
            (body_len,) = struct.unpack("<Q", head)
            body = fh.read(body_len)
            if len(body) < body_len:
                raise DataError(f"{path}: truncated record {n} body at offset {offset}")
            (n_c,) = struct.unpack_from("<I", body, 0)
            need = 4 + n_c * 4 + patch_bytes + n_c * info.d_c * 4
            if body_len != need:
                raise DataError(f"{path}: record {n} length {body_len} != expected {need}")
            pos = 4
            ids = np.frombuffer(body, dtype="<u4", count=n_c, offset=pos)
            pos += n_c * 4
            patches = np.frombuffer(body, dtype="<f4", count=info.n_p * info.d_i,
                                    offset=pos).reshape(info.n_p, info.d_i)
            pos += patch_bytes
            hidden = np.frombuffer(body, dtype="<f4", count=n_c * info.d_c,
                                   offset=pos).reshape(n_c, info.d_c)
            token_ids = tuple(int(t) for t in ids)
            yield LearnRecord(
                patches=PatchFeatures(patches.copy()),
                token_ids=token_ids,
                hidden=CaptionHiddenStates(hidden.copy(), token_ids),
            )


def read_shard_dir(
    directory: str,
    start: int = 0,
    expected_dims: tuple[int, int, int] | None = None,
) -> Iterator[LearnRecord]:
    """Chain every *.hdsh shard in a directory, sorted by name.

    start counts records across the whole chain; fully skipped shards are
    never decoded.
    """
    paths = sorted(
        os.path.join(directory, name)
        for name in os.listdir(directory)
        if name.endswith(".hdsh")
    )
    if not paths:
        raise DataError(f"no .hdsh shards in {directory}")
    remaining_skip = start
    for p in paths:
        count = shard_info(p).record_count
        if remaining_skip >= count:
            remaining_skip -= count
            continue
        yield from read_shard(p, start=remaining_skip, expected_dims=expected_dims)
        remaining_skip = 0
