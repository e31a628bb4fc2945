"""Seeded angular LSH: sign of random Gaussian projections.

Two named projectors map frozen-model features into bipolar hypervectors:
one for image patch features, one for caption hidden states. Projection
rows are never stored; each row is a pure function of
(seed, role, row index), so persisting the seed reproduces the projector
exactly. Positional codes for image patches come from the same generator
family under a third role.

Row generation, fixed for reproducibility within a build:

* Philox(2x64-bit key, 256-bit counter) supplies raw 64-bit words; the
  key is derived from (seed, role) via splitmix64 and the counter is
  addressed so row r owns words [r*W, (r+1)*W) with W a multiple of 4.
  Row content therefore does not depend on block boundaries.
* Gaussian components come from Box-Muller over pairs of uniforms built
  from the high 53 bits of each word (inverse-CDF-free, fixed
  consumption per row).

Byte-order note: word-to-bit expansion for positional codes views uint64
words as little-endian bytes, matching the packed-vector bit layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hdcap.hdcore import DEFAULT_CHUNK_BYTES

_MASK64 = (1 << 64) - 1

ROLE_IMAGE = "image"
ROLE_CAPTION = "caption"
_ROLE_POSITIONAL = "positional"

_ROLE_SALTS = {
    ROLE_IMAGE: 0x494D4147_45F00D01,
    ROLE_CAPTION: 0x43415054_494F4E02,
    _ROLE_POSITIONAL: 0x504F5349_54494F03,
}


def splitmix64(x: int) -> int:
    """One splitmix64 step; used to derive Philox keys from user seeds."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _philox_key(seed: int, role: str) -> list[int]:
    k0 = splitmix64((seed & _MASK64) ^ _ROLE_SALTS[role])
    return [k0, splitmix64(k0)]


def _raw_words(seed: int, role: str, first_row: int, n_rows: int, words_per_row: int) -> np.ndarray:
    """Counter-addressed raw words, shape (n_rows, words_per_row)."""
    assert words_per_row % 4 == 0  # rows start on Philox counter boundaries
    bg = np.random.Philox(counter=first_row * (words_per_row // 4), key=_philox_key(seed, role))
    return bg.random_raw(n_rows * words_per_row).reshape(n_rows, words_per_row)


def gaussian_rows(seed: int, role: str, first_row: int, n_rows: int, dims: int) -> np.ndarray:
    """Standard-normal projection rows [first_row, first_row + n_rows).

    Pure function of (seed, role, row index); any block decomposition
    yields identical rows.
    """
    half = (dims + 1) // 2
    words_per_row = 4 * ((2 * half + 3) // 4)
    w = _raw_words(seed, role, first_row, n_rows, words_per_row)
    # u1 in (0, 1] so log() is finite; u2 in [0, 1).
    u1 = ((w[:, :half] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (w[:, half : 2 * half] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = (2.0 * np.pi) * u2
    out = np.empty((n_rows, 2 * half), dtype=np.float64)
    out[:, 0::2] = radius * np.cos(angle)
    out[:, 1::2] = radius * np.sin(angle)
    return out[:, :dims]


@dataclass(frozen=True)
class LshProjector:
    """Angular LSH projector defined entirely by (seed, role, dims)."""

    seed: int
    input_dims: int
    output_dims: int
    role: str

    def __post_init__(self) -> None:
        if self.input_dims <= 0 or self.output_dims <= 0:
            raise ValueError("projector dims must be positive")
        if self.role not in (ROLE_IMAGE, ROLE_CAPTION):
            raise ValueError(f"unknown projector role: {self.role!r}")


def project_block(
    proj: LshProjector,
    x: np.ndarray,
    block_rows: int | None = None,
) -> np.ndarray:
    """Project an (n, d) feature matrix to (n, beta) bipolar sketches.

    Projection rows are generated in blocks of block_rows and discarded,
    so peak memory is O(block_rows * d + output), never O(beta * d).
    Sign ties at an exact-zero dot product resolve to +1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected 2-D features, got shape {x.shape}")
    if x.shape[1] != proj.input_dims:
        raise ValueError(f"feature width {x.shape[1]} != projector input dims {proj.input_dims}")
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")
    norms = np.abs(x).sum(axis=1)
    if np.any(norms == 0.0):
        raise ValueError("all-zero feature vector has no LSH sign")
    if block_rows is None:
        block_rows = max(256, DEFAULT_CHUNK_BYTES // (8 * proj.input_dims))
    n = x.shape[0]
    out = np.empty((n, proj.output_dims), dtype=np.int8)
    for start in range(0, proj.output_dims, block_rows):
        stop = min(start + block_rows, proj.output_dims)
        q = gaussian_rows(proj.seed, proj.role, start, stop - start, proj.input_dims)
        dots = x @ q.T
        out[:, start:stop] = np.where(dots >= 0.0, 1, -1).astype(np.int8)
    return out


def project(proj: LshProjector, x: np.ndarray, block_rows: int | None = None) -> np.ndarray:
    """Project a single feature vector to a bipolar hypervector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {x.shape}")
    return project_block(proj, x[None, :], block_rows=block_rows)[0]


def positional_codes(seed: int, n_codes: int, beta: int) -> np.ndarray:
    """Independent uniform bipolar codes, one per patch position.

    Code j is a pure function of (seed, j); returns (n_codes, beta) int8.
    """
    if n_codes <= 0:
        raise ValueError("n_codes must be positive")
    words_per_code = 4 * ((beta + 255) // 256)
    w = _raw_words(seed, _ROLE_POSITIONAL, 0, n_codes, words_per_code)
    bits = np.unpackbits(w.view(np.uint8).reshape(n_codes, -1), axis=1, count=beta, bitorder="little")
    return (bits.astype(np.int8) << 1) - 1
