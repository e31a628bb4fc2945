"""Bipolar hypervector algebra: bind, bundle, binarize, pack, Hamming.

Representation conventions (plain numpy arrays, no wrapper classes):

* bipolar hypervector: int8 array, every component -1 or +1
* accumulator:         int32 array, componentwise running sum of bipolars
* packed hypervector:  uint8 array of ceil(dims/8) bytes; bit k of byte j
  encodes component 8*j + k with +1 -> 1 and -1 -> 0 (little-endian bit
  order); trailing bits of the last byte are zero

Binding is componentwise multiplication (self-inverse, distance
preserving). Bundling is integer accumulation followed by a sign
threshold; ties at zero resolve through a TieRule, +1 by default so
results are reproducible across runs and resumes.
"""

from __future__ import annotations

import enum

import numpy as np

INT32_MAX = np.iinfo(np.int32).max
INT32_MIN = np.iinfo(np.int32).min

# Working-set budget for batched Hamming scans, in bytes per chunk.
DEFAULT_CHUNK_BYTES = 64 * 1024 * 1024


class TieRule(enum.Enum):
    """How binarize maps an accumulator component equal to zero."""

    PLUS_ONE = "plus_one"
    MINUS_ONE = "minus_one"


def _check_same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def random_bipolar(rng: np.random.Generator, dims: int, n: int | None = None) -> np.ndarray:
    """Uniform random bipolar vector(s): shape (dims,) or (n, dims), int8."""
    size = dims if n is None else (n, dims)
    return (rng.integers(0, 2, size=size, dtype=np.int8) << 1) - 1


def bind(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Componentwise product of two bipolar vectors.

    Self-inverse: bind(bind(a, b), b) == a. The result is near-orthogonal
    to both inputs for independent random inputs.
    """
    _check_same_dims(a, b)
    return np.multiply(a, b, dtype=np.int8)


def zero_accumulator(dims: int) -> np.ndarray:
    """Fresh all-zero int32 accumulator."""
    return np.zeros(dims, dtype=np.int32)


def bundle_accumulate(acc: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Add a bipolar vector into an int32 accumulator, in place.

    Raises OverflowError if any component would leave the signed 32-bit
    range (possible only after ~2**31 accumulations).
    """
    _check_same_dims(acc, v)
    if acc.dtype != np.int32:
        raise ValueError(f"accumulator must be int32, got {acc.dtype}")
    hi = int(acc.max(initial=0))
    lo = int(acc.min(initial=0))
    if hi >= INT32_MAX or lo <= INT32_MIN:
        raise OverflowError("accumulator component at int32 limit")
    acc += v
    return acc


def binarize(acc: np.ndarray, tie: TieRule = TieRule.PLUS_ONE) -> np.ndarray:
    """Sign-threshold an accumulator back to a bipolar vector."""
    if tie is TieRule.PLUS_ONE:
        return np.where(acc >= 0, 1, -1).astype(np.int8)
    return np.where(acc > 0, 1, -1).astype(np.int8)


def pack(v: np.ndarray) -> np.ndarray:
    """Pack a bipolar vector into bits, 8 components per byte.

    Component 8*j + k lands in bit k of byte j (+1 -> 1, -1 -> 0); unused
    trailing bits are zero. Also accepts a (n, dims) matrix, packing rows.
    """
    return np.packbits(v > 0, axis=-1 if v.ndim > 1 else None, bitorder="little")


def unpack(p: np.ndarray, dims: int) -> np.ndarray:
    """Inverse of pack; dims is required because of byte padding."""
    bits = np.unpackbits(p, axis=-1 if p.ndim > 1 else None, count=dims, bitorder="little")
    return (bits.astype(np.int8) << 1) - 1


def _build_popcount_lut() -> np.ndarray:
    lut = np.zeros(256, dtype=np.uint8)
    for v in range(1, 256):
        lut[v] = lut[v >> 1] + (v & 1)
    return lut


POPCOUNT_LUT = _build_popcount_lut()
POPCOUNT_LUT.setflags(write=False)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Number of disagreeing components between two bipolar vectors."""
    _check_same_dims(a, b)
    return int(np.count_nonzero(a != b))


def normalized_hamming(a: np.ndarray, b: np.ndarray) -> float:
    """hamming / dims, in [0, 1]."""
    return hamming(a, b) / a.shape[-1]


def hamming_packed(a: np.ndarray, b: np.ndarray, lut: np.ndarray = POPCOUNT_LUT) -> int:
    """Hamming distance on packed vectors: sum of lut[a XOR b] per byte.

    Exactly equals hamming() on the unpacked vectors, since trailing pad
    bits are zero in both operands.
    """
    _check_same_dims(a, b)
    return int(lut[np.bitwise_xor(a, b)].sum(dtype=np.int64))


def hamming_batch(
    rows: np.ndarray,
    query: np.ndarray,
    chunk_bytes: int = DEFAULT_CHUNK_BYTES,
) -> np.ndarray:
    """Hamming distance from one packed query to every packed row.

    rows is a contiguous (n_rows, n_bytes) uint8 block (typically a
    memory-mapped prototype slice); query is (n_bytes,) uint8. Rows are
    scanned in chunks bounded by chunk_bytes so the working set stays
    small; the result is identical for any chunk size.
    """
    if rows.ndim != 2:
        raise ValueError(f"rows must be 2-D, got shape {rows.shape}")
    if query.ndim != 1 or rows.shape[1] != query.shape[0]:
        raise ValueError(f"dimension mismatch: rows {rows.shape} vs query {query.shape}")
    n_rows, n_bytes = rows.shape
    out = np.empty(n_rows, dtype=np.int64)
    step = max(1, chunk_bytes // max(1, n_bytes))
    use_popcount = hasattr(np, "bitwise_count")
    for start in range(0, n_rows, step):
        stop = min(start + step, n_rows)
        x = np.bitwise_xor(rows[start:stop], query)
        if use_popcount:
            counts = np.bitwise_count(x)
        else:
            counts = POPCOUNT_LUT[x]
        out[start:stop] = counts.sum(axis=1, dtype=np.int64)
    return out
