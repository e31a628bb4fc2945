"""Single-pass learning loop: stream records, bind, accumulate, checkpoint.

Each record contributes one accumulate per predicted position: the image
hypervector bound with the caption context up to position i lands in the
prototype row for (i + 1, next token). Accumulation commutes, so record
order never changes the result, and summing partition memories equals
learning the union.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from hdcap.encoders import (
    CaptionHiddenStates,
    PatchFeatures,
    combine,
    encode_caption_positions,
    encode_image,
)
from hdcap.errors import DataError
from hdcap.lsh import LshProjector
from hdcap.protomem import PrototypeMemory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LearnRecord:
    """One training pair: patch features, token ids, causal hidden states."""

    patches: PatchFeatures
    token_ids: tuple[int, ...]
    hidden: CaptionHiddenStates

    def __post_init__(self) -> None:
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        if len(self.token_ids) < 2:
            raise DataError("record needs at least prefix plus one target token")
        if self.hidden.n_c != len(self.token_ids):
            raise DataError(
                f"{self.hidden.n_c} hidden rows vs {len(self.token_ids)} token ids"
            )
        if self.hidden.token_ids != self.token_ids:
            raise DataError("hidden-state token ids disagree with record token ids")


@dataclass(frozen=True)
class LearnConfig:
    l_max: int
    prefix_ids: tuple[int, ...]
    flush_batch: int = 512
    truncation: int | None = None  # max caption tokens kept; defaults to l_max
    strict: bool = False  # abort on malformed records instead of skip-with-log

    def __post_init__(self) -> None:
        if self.flush_batch < 1:
            raise ValueError("flush_batch must be >= 1")
        if not self.prefix_ids:
            raise ValueError("prefix_ids must not be empty")
        if self.effective_truncation > self.l_max:
            raise ValueError("truncation may not exceed l_max")
        if len(self.prefix_ids) >= self.effective_truncation:
            raise ValueError("prefix leaves no room for targets under truncation")

    @property
    def effective_truncation(self) -> int:
        return self.l_max if self.truncation is None else self.truncation


@dataclass
class LearnSummary:
    records: int = 0
    tokens: int = 0
    skipped: int = 0
    duration: float = 0.0


def learn_record(
    mem: PrototypeMemory,
    record: LearnRecord,
    proj_img: LshProjector,
    proj_cap: LshProjector,
    codes: np.ndarray,
    config: LearnConfig,
) -> int:
    """Absorb one record; returns the number of accumulated positions."""
    ids = record.token_ids
    p = len(config.prefix_ids)
    if ids[:p] != config.prefix_ids:
        raise DataError(f"record does not start with the configured prefix: {ids[:p]}")
    cut = config.effective_truncation
    if len(ids) > cut:
        ids = ids[:cut]
    n_c = len(ids)
    if n_c > mem.l_max:
        raise DataError(f"caption length {n_c} exceeds l_max {mem.l_max} after truncation")
    if n_c < p + 1:
        raise DataError("caption has no target tokens beyond the prefix")
    bad = [t for t in ids if not 0 <= t < mem.vocab_size]
    if bad:
        raise DataError(f"token ids {bad} out of vocabulary (size {mem.vocab_size})")

    hidden = record.hidden
    if hidden.n_c > n_c:
        hidden = CaptionHiddenStates(hidden.data[:n_c], ids)
    img_hv = encode_image(record.patches, proj_img, codes)
    cap_hvs = encode_caption_positions(hidden, proj_cap)
    # Context row j (0-based) predicts token ids[j + 1] at 1-based position j + 2;
    # learning starts at the last prefix token, so position 1 is never written.
    for j in range(p - 1, n_c - 1):
        mem.accumulate(j + 2, ids[j + 1], combine(img_hv, cap_hvs[j]))
    return n_c - p


def learn_stream(
    mem: PrototypeMemory,
    source: Iterable[LearnRecord],
    proj_img: LshProjector,
    proj_cap: LshProjector,
    codes: np.ndarray,
    config: LearnConfig,
    after_checkpoint: Callable[[int], None] | None = None,
    progress: Callable[[int], None] | None = None,
    source_start: int = 0,
) -> LearnSummary:
    """Absorb records [records_consumed, end) from a reproducible stream.

    The first records_consumed records are skipped, which makes rerunning
    the same stream after an interruption equivalent to one uninterrupted
    pass. A source that can seek may instead yield from stream position
    source_start to avoid decoding records it knows will be skipped. A
    checkpoint (data flush, then header update) lands every flush_batch
    consumed records and once at the end. Malformed records are skipped
    with a log line unless config.strict; skipped records still count
    toward the stream position.
    """
    if source_start > mem.records_consumed:
        raise ValueError(
            f"source starts at {source_start}, beyond checkpoint {mem.records_consumed}"
        )
    summary = LearnSummary()
    started = time.monotonic()
    consumed = mem.records_consumed
    since_checkpoint = 0
    for index, record in enumerate(source, start=source_start):
        if index < consumed:
            continue
        try:
            summary.tokens += learn_record(mem, record, proj_img, proj_cap, codes, config)
            summary.records += 1
        except DataError as exc:
            if config.strict:
                raise DataError(f"record {index}: {exc}") from exc
            summary.skipped += 1
            log.warning("skipping record %d: %s", index, exc)
        consumed = index + 1
        since_checkpoint += 1
        if since_checkpoint >= config.flush_batch:
            mem.flush(records_consumed=consumed)
            since_checkpoint = 0
            if after_checkpoint is not None:
                after_checkpoint(consumed)
        if progress is not None:
            progress(consumed)
    mem.flush(records_consumed=consumed)
    summary.duration = time.monotonic() - started
    return summary
