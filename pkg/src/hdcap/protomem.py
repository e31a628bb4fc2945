"""Disk-resident prototype memory: int32 accumulation, packed retrieval.

The memory is a single file in the HDFP format:

    offset 0, 256 bytes, little-endian header:
        magic            4s   b"HDFP"
        format version   u32  (currently 1)
        state            u8   1 = int32 accumulator, 2 = packed bits
        l_max            u64  maximum token position
        vocab_size       u64
        beta             u64  hypervector dimension
        seed lsh_image   u64
        seed lsh_caption u64
        seed positional  u64
        seed sampler     u64
        records_consumed u64  training pairs durably absorbed
        valid            u8   0 while a state transition is in flight
        (zero padding to 256 bytes)
    offset 256: data region, row-major (position, token, component)
        int32 (l_max, vocab_size, beta)            in accumulator state
        uint8 (l_max, vocab_size, ceil(beta / 8))  in packed state

Positions are 1-based; position 1 belongs to the fixed caption prefix
and is never written, so prediction targets start at position 2.

Durability contract: data pages are flushed and fsynced before the
header's records_consumed advances, so an interrupted run can only
under-count and a resume that skips records_consumed records reproduces
the uninterrupted file bit for bit.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from hdcap.errors import DataError, StateError
from hdcap.hdcore import INT32_MAX, TieRule, binarize

MAGIC = b"HDFP"
FORMAT_VERSION = 1
HEADER_SIZE = 256

STATE_ACCUM_I32 = 1
STATE_PACKED_BITS = 2
_STATE_NAMES = {STATE_ACCUM_I32: "AccumI32", STATE_PACKED_BITS: "PackedBits"}

_HEADER = struct.Struct("<4sIBQQQQQQQQB")

# Bounded-memory chunk for binarize/merge streaming, in accumulator bytes.
_STREAM_CHUNK_BYTES = 64 * 1024 * 1024


@dataclass(frozen=True)
class SeedBundle:
    """The four reproducibility seeds persisted in every memory header."""

    lsh_image: int
    lsh_caption: int
    positional: int
    sampler: int

    @classmethod
    def derive(cls, master: int) -> "SeedBundle":
        from hdcap.lsh import splitmix64

        s0 = splitmix64(master)
        s1 = splitmix64(s0)
        s2 = splitmix64(s1)
        return cls(lsh_image=s0, lsh_caption=s1, positional=s2, sampler=splitmix64(s2))


def packed_row_bytes(beta: int) -> int:
    return (beta + 7) // 8


def data_region_bytes(l_max: int, vocab_size: int, beta: int, state: int) -> int:
    row = beta * 4 if state == STATE_ACCUM_I32 else packed_row_bytes(beta)
    return l_max * vocab_size * row


def _pack_header(state: int, l_max: int, vocab_size: int, beta: int, seeds: SeedBundle,
                 records_consumed: int, valid: bool) -> bytes:
    raw = _HEADER.pack(
        MAGIC, FORMAT_VERSION, state, l_max, vocab_size, beta,
        seeds.lsh_image, seeds.lsh_caption, seeds.positional, seeds.sampler,
        records_consumed, 1 if valid else 0,
    )
    return raw.ljust(HEADER_SIZE, b"\x00")


class PrototypeMemory:
    """One open HDFP file. Use create()/open_memory(), not the constructor."""

    def __init__(self, path: str, fd: int, state: int, l_max: int, vocab_size: int,
                 beta: int, seeds: SeedBundle, records_consumed: int, writable: bool):
        self.path = path
        self._fd = fd
        self.state = state
        self.l_max = l_max
        self.vocab_size = vocab_size
        self.beta = beta
        self.seeds = seeds
        self.records_consumed = records_consumed
        self._writable = writable
        if state == STATE_ACCUM_I32:
            shape = (l_max, vocab_size, beta)
            self._data = np.memmap(path, dtype="<i4", mode="r+" if writable else "r",
                                   offset=HEADER_SIZE, shape=shape)
        else:
            shape = (l_max, vocab_size, packed_row_bytes(beta))
            self._data = np.memmap(path, dtype=np.uint8, mode="r", offset=HEADER_SIZE, shape=shape)

    # -- lifecycle ----------------------------------------------------

    @classmethod
    def create(cls, path: str, l_max: int, vocab_size: int, beta: int,
               seeds: SeedBundle, overwrite: bool = False) -> "PrototypeMemory":
        """Zero-initialized accumulator memory with a durable header."""
        if l_max < 2 or vocab_size <= 0 or beta <= 0:
            raise ValueError("dims must be positive (and l_max >= 2)")
        if os.path.exists(path) and not overwrite:
            raise DataError(f"{path} exists; pass overwrite to replace it")
        total = HEADER_SIZE + data_region_bytes(l_max, vocab_size, beta, STATE_ACCUM_I32)
        fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        try:
            os.pwrite(fd, _pack_header(STATE_ACCUM_I32, l_max, vocab_size, beta, seeds, 0, True), 0)
            os.ftruncate(fd, total)
            os.fsync(fd)
        except BaseException:
            os.close(fd)
            raise
        return cls(path, fd, STATE_ACCUM_I32, l_max, vocab_size, beta, seeds, 0, writable=True)

    @classmethod
    def open_memory(cls, path: str, writable: bool | None = None) -> "PrototypeMemory":
        """Open an existing HDFP file, validating header and file size."""
        fd = os.open(path, os.O_RDWR if os.access(path, os.W_OK) else os.O_RDONLY)
        try:
            raw = os.pread(fd, HEADER_SIZE, 0)
            if len(raw) < HEADER_SIZE:
                raise DataError(f"{path}: truncated header")
            (magic, version, state, l_max, vocab, beta,
             s0, s1, s2, s3, records, valid) = _HEADER.unpack(raw[: _HEADER.size])
            if magic != MAGIC:
                raise DataError(f"{path}: bad magic {magic!r}")
            if version != FORMAT_VERSION:
                raise DataError(f"{path}: unsupported format version {version}")
            if state not in _STATE_NAMES:
                raise DataError(f"{path}: unknown state {state}")
            if not valid:
                raise DataError(f"{path}: marked invalid (interrupted state transition)")
            expected = HEADER_SIZE + data_region_bytes(l_max, vocab, beta, state)
            actual = os.fstat(fd).st_size
            if actual != expected:
                raise DataError(f"{path}: size {actual} != expected {expected} from header dims")
        except BaseException:
            os.close(fd)
            raise
        if writable is None:
            writable = state == STATE_ACCUM_I32
        if writable and state == STATE_PACKED_BITS:
            os.close(fd)
            raise StateError("packed memories are immutable")
        seeds = SeedBundle(s0, s1, s2, s3)
        return cls(path, fd, state, l_max, vocab, beta, seeds, records, writable=writable)

    def close(self) -> None:
        if self._data is not None:
            del self._data
            self._data = None
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self) -> "PrototypeMemory":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- accumulator-state operations ----------------------------------

    def _require_state(self, state: int, op: str) -> None:
        if self.state != state:
            raise StateError(f"{op} requires {_STATE_NAMES[state]} state, memory is {_STATE_NAMES[self.state]}")

    def accumulate(self, position: int, token: int, v: np.ndarray) -> None:
        """Add a bipolar vector into the (position, token) prototype row."""
        self._require_state(STATE_ACCUM_I32, "accumulate")
        if not self._writable:
            raise StateError("memory opened read-only")
        if not 2 <= position <= self.l_max:
            raise ValueError(f"position {position} out of range [2, {self.l_max}]")
        if not 0 <= token < self.vocab_size:
            raise ValueError(f"token {token} out of range [0, {self.vocab_size})")
        if v.shape != (self.beta,):
            raise ValueError(f"vector shape {v.shape} != ({self.beta},)")
        row = self._data[position - 1, token]
        if int(row.max(initial=0)) >= INT32_MAX or int(row.min(initial=0)) <= -INT32_MAX:
            raise OverflowError(f"prototype row ({position}, {token}) at int32 limit")
        row += v

    def flush(self, records_consumed: int | None = None) -> None:
        """Make pending accumulates durable, then advance the checkpoint.

        Data pages are msynced and fsynced before the header is touched;
        records_consumed never moves backwards.
        """
        self._require_state(STATE_ACCUM_I32, "flush")
        if not self._writable:
            raise StateError("memory opened read-only")
        self._data.flush()
        os.fsync(self._fd)
        if records_consumed is not None:
            if records_consumed < self.records_consumed:
                raise ValueError(
                    f"records_consumed may not decrease ({records_consumed} < {self.records_consumed})"
                )
            if records_consumed != self.records_consumed:
                self.records_consumed = records_consumed
                self._write_header()

    def _write_header(self, valid: bool = True) -> None:
        os.pwrite(self._fd, _pack_header(self.state, self.l_max, self.vocab_size, self.beta,
                                         self.seeds, self.records_consumed, valid), 0)
        os.fsync(self._fd)

    def binarize_pack(self, out_path: str, overwrite: bool = False,
                      tie: TieRule = TieRule.PLUS_ONE) -> "PrototypeMemory":
        """Sign-binarize and bit-pack into a new immutable packed memory.

        Streams bounded-size chunks; the output header stays invalid
        until every byte is written, so a torn conversion is detected.
        """
        self._require_state(STATE_ACCUM_I32, "binarize_pack")
        if os.path.exists(out_path) and not overwrite:
            raise DataError(f"{out_path} exists; pass overwrite to replace it")
        row_bytes = packed_row_bytes(self.beta)
        out_fd = os.open(out_path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        try:
            header = _pack_header(STATE_PACKED_BITS, self.l_max, self.vocab_size, self.beta,
                                  self.seeds, self.records_consumed, valid=False)
            os.pwrite(out_fd, header, 0)
            chunk_tokens = max(1, _STREAM_CHUNK_BYTES // (self.beta * 4))
            offset = HEADER_SIZE
            for pos in range(self.l_max):
                for t0 in range(0, self.vocab_size, chunk_tokens):
                    t1 = min(t0 + chunk_tokens, self.vocab_size)
                    block = self._data[pos, t0:t1]
                    bits = block >= 0 if tie is TieRule.PLUS_ONE else block > 0
                    packed = np.packbits(bits, axis=1, bitorder="little")
                    os.pwrite(out_fd, packed.tobytes(), offset)
                    offset += packed.nbytes
            os.fsync(out_fd)
            header = _pack_header(STATE_PACKED_BITS, self.l_max, self.vocab_size, self.beta,
                                  self.seeds, self.records_consumed, valid=True)
            os.pwrite(out_fd, header, 0)
            os.fsync(out_fd)
        finally:
            os.close(out_fd)
        assert offset == HEADER_SIZE + self.l_max * self.vocab_size * row_bytes
        return PrototypeMemory.open_memory(out_path)

    # -- packed-state operations ---------------------------------------

    def slice(self, position: int) -> np.ndarray:
        """Zero-copy (vocab_size, row_bytes) view of one position block."""
        self._require_state(STATE_PACKED_BITS, "slice")
        if not 1 <= position <= self.l_max:
            raise ValueError(f"position {position} out of range [1, {self.l_max}]")
        return self._data[position - 1]

    # -- shared ----------------------------------------------------------

    def accum_row(self, position: int, token: int) -> np.ndarray:
        """Read-only copy of one accumulator row (testing and inspection)."""
        self._require_state(STATE_ACCUM_I32, "accum_row")
        return np.array(self._data[position - 1, token])

    def describe(self) -> dict:
        return {
            "path": self.path,
            "state": _STATE_NAMES[self.state],
            "l_max": self.l_max,
            "vocab_size": self.vocab_size,
            "beta": self.beta,
            "records_consumed": self.records_consumed,
            "seeds": {
                "lsh_image": self.seeds.lsh_image,
                "lsh_caption": self.seeds.lsh_caption,
                "positional": self.seeds.positional,
                "sampler": self.seeds.sampler,
            },
            "data_bytes": data_region_bytes(self.l_max, self.vocab_size, self.beta, self.state),
        }


def merge_accumulators(paths: list[str], out_path: str, overwrite: bool = False) -> PrototypeMemory:
    """Sum the int32 data of partition memories into one.

    All inputs must share dims and seeds. Summing accumulators built over
    dataset partitions and then binarizing equals building over the
    union, because accumulation is componentwise addition.
    """
    if len(paths) < 2:
        raise ValueError("need at least two memories to merge")
    sources = [PrototypeMemory.open_memory(p, writable=False) for p in paths]
    try:
        first = sources[0]
        for other in sources[1:]:
            if other.state != STATE_ACCUM_I32 or first.state != STATE_ACCUM_I32:
                raise StateError("merge requires AccumI32 memories")
            same = (other.l_max, other.vocab_size, other.beta, other.seeds) == (
                first.l_max, first.vocab_size, first.beta, first.seeds)
            if not same:
                raise DataError("cannot merge memories with different dims or seeds")
        seeds = first.seeds
        out = PrototypeMemory.create(out_path, first.l_max, first.vocab_size, first.beta,
                                     seeds, overwrite=overwrite)
        chunk_tokens = max(1, _STREAM_CHUNK_BYTES // (first.beta * 4))
        for pos in range(first.l_max):
            for t0 in range(0, first.vocab_size, chunk_tokens):
                t1 = min(t0 + chunk_tokens, first.vocab_size)
                total = np.zeros((t1 - t0, first.beta), dtype=np.int64)
                for src in sources:
                    total += src._data[pos, t0:t1]
                if total.max(initial=0) > INT32_MAX or total.min(initial=0) < -INT32_MAX:
                    raise OverflowError("merged accumulator exceeds int32 range")
                out._data[pos, t0:t1] = total.astype(np.int32)
        out.flush(records_consumed=sum(s.records_consumed for s in sources))
        return out
    finally:
        for s in sources:
            s.close()


def binarize_reference(accum_row: np.ndarray, tie: TieRule = TieRule.PLUS_ONE) -> np.ndarray:
    """Unpacked binarization of a row; oracle counterpart of binarize_pack."""
    return binarize(accum_row, tie)


def create_packed_random(path: str, l_max: int, vocab_size: int, beta: int,
                         seeds: SeedBundle, rng_seed: int = 0,
                         overwrite: bool = False) -> None:
    """Benchmark fixture: a packed memory filled with random bits.

    Trailing pad bits of each row stay zero, as the format requires.
    """
    if os.path.exists(path) and not overwrite:
        raise DataError(f"{path} exists; pass overwrite to replace it")
    row_bytes = packed_row_bytes(beta)
    rng = np.random.default_rng(rng_seed)
    tail_mask = np.uint8(0xFF if beta % 8 == 0 else (1 << (beta % 8)) - 1)
    fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
    try:
        os.pwrite(fd, _pack_header(STATE_PACKED_BITS, l_max, vocab_size, beta, seeds, 0, True), 0)
        offset = HEADER_SIZE
        chunk_rows = max(1, _STREAM_CHUNK_BYTES // row_bytes)
        for pos in range(l_max):
            for t0 in range(0, vocab_size, chunk_rows):
                t1 = min(t0 + chunk_rows, vocab_size)
                block = rng.integers(0, 256, size=(t1 - t0, row_bytes), dtype=np.uint8)
                block[:, -1] &= tail_mask
                os.pwrite(fd, block.tobytes(), offset)
                offset += block.nbytes
        os.fsync(fd)
    finally:
        os.close(fd)
