"""Deliberately naive dense reference implementations.

These are the independent oracles for the engine's fast paths: plain
in-RAM int32 arrays, per-element Python loops, no packing, no memory
mapping, no batching. They share only the projection and algebra
primitives with the engine, so any divergence in accumulation, storage,
binarization, or retrieval shows up as a mismatch.
"""

from __future__ import annotations

import numpy as np

from hdcap.encoders import encode_caption_positions, encode_image
from hdcap.hdcore import TieRule, binarize
from hdcap.lsh import LshProjector


def reference_learn(
    records,
    proj_img: LshProjector,
    proj_cap: LshProjector,
    codes: np.ndarray,
    l_max: int,
    vocab_size: int,
    prefix_len: int,
    truncation: int | None = None,
) -> np.ndarray:
    """Dense (l_max, vocab, beta) int32 accumulator, 1-based position p at p-1."""
    beta = proj_img.output_dims
    dense = np.zeros((l_max, vocab_size, beta), dtype=np.int32)
    cut = truncation if truncation is not None else l_max
    for record in records:
        ids = list(record.token_ids)[:cut]
        img = encode_image(record.patches, proj_img, codes)
        caps = encode_caption_positions(record.hidden, proj_cap)
        for j in range(prefix_len - 1, len(ids) - 1):
            target = ids[j + 1]
            bound = img * caps[j]
            dense[j + 1, target, :] += bound
    return dense


def reference_binarize(dense: np.ndarray, tie: TieRule = TieRule.PLUS_ONE) -> np.ndarray:
    """Unpacked bipolar prototype array, same shape as the accumulator."""
    out = np.empty(dense.shape, dtype=np.int8)
    for p in range(dense.shape[0]):
        for t in range(dense.shape[1]):
            out[p, t] = binarize(dense[p, t], tie)
    return out


def reference_hd_logits(
    proto_bits: np.ndarray,
    comb: np.ndarray,
    position: int,
    window: int,
    l_max: int,
) -> np.ndarray:
    """Windowed Hamming logits straight off the unpacked prototype array."""
    beta = comb.shape[0]
    vocab = proto_bits.shape[1]
    best = np.full(vocab, -np.inf)
    for w in range(window):
        pos = position + w
        if pos > l_max:
            break
        for t in range(vocab):
            d = int((proto_bits[pos - 1, t] != comb).sum())
            best[t] = max(best[t], float(beta - d))
    return best
