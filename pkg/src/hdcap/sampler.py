"""Candidate construction and similarity-guided token selection.

Candidates come from the usual chain: repetition penalty, temperature,
top-k, softmax, nucleus (top-p). Selection then re-ranks the surviving
candidates by cosine similarity between the image embedding and the
text of history-plus-candidate, blended with the candidate
probabilities. All ties break toward the lower token id so replays are
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 1.0
    repetition_penalty: float = 1.1
    top_k: int = 80
    top_p: float = 0.95
    clip_weight: float = 0.5
    sharpen: float = 2.0
    rng_seed: int = 0
    min_candidates: int | None = None  # accepted for compatibility, unused

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if not 0 <= self.clip_weight <= 1:
            raise ValueError("clip_weight must be in [0, 1]")
        if self.repetition_penalty <= 0:
            raise ValueError("repetition_penalty must be > 0")


class CandidateScorer(Protocol):
    """Detokenization plus text embedding, used to score candidates."""

    normalized: bool

    def detokenize(self, ids: Sequence[int]) -> str: ...

    def embed_text(self, text: str) -> np.ndarray: ...


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def build_candidates(
    logits: np.ndarray,
    history: Sequence[int],
    cfg: SamplerConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Penalty, temperature, top-k, softmax, nucleus; returns (ids, probs).

    Candidates come back sorted by descending probability (ties by id),
    renormalized to sum to one. The nucleus keeps the smallest prefix of
    candidates whose cumulative mass reaches top_p, including the one
    that crosses it.
    """
    work = np.asarray(logits, dtype=np.float64).copy()
    if work.ndim != 1:
        raise ValueError(f"logits must be 1-D, got {work.shape}")
    if np.isnan(work).any() or np.isposinf(work).any():
        raise ValueError("logits must be finite (negative infinity allowed as a mask)")
    if np.all(np.isneginf(work)):
        raise ValueError("all logits are -inf, nothing to sample")

    history_ids = np.unique(np.asarray(list(history), dtype=np.int64)) if len(history) else []
    for t in history_ids:
        v = work[t]
        work[t] = v / cfg.repetition_penalty if v > 0 else v * cfg.repetition_penalty
    work /= cfg.temperature

    # Deterministic ranking: by descending logit, then ascending token id.
    order = np.lexsort((np.arange(work.shape[0]), -work))
    kept = order[: min(cfg.top_k, work.shape[0])]
    kept = kept[~np.isneginf(work[kept])]
    probs = _softmax(work[kept])

    cum = np.cumsum(probs)
    cut = int(np.searchsorted(cum, cfg.top_p, side="left"))
    cut = min(cut, probs.shape[0] - 1)
    kept = kept[: cut + 1]
    probs = probs[: cut + 1]
    return kept, probs / probs.sum()


def select_token(
    candidates: np.ndarray,
    probs: np.ndarray,
    history: Sequence[int],
    image_embedding: np.ndarray | None,
    scorer: CandidateScorer | None,
    cfg: SamplerConfig,
    trace: dict | None = None,
) -> int:
    """Pick one candidate by blended similarity and probability scores.

    With a single candidate (or clip_weight 0) the similarity provider is
    never consulted. Otherwise each candidate's continuation text is
    embedded and scored: softmax(sharpen * cosine) blended as
    clip_weight * clip + (1 - clip_weight) * prob, argmax wins.
    """
    candidates = np.asarray(candidates)
    probs = np.asarray(probs, dtype=np.float64)
    if candidates.size == 0:
        raise ValueError("no candidates to select from")
    if candidates.shape != probs.shape:
        raise ValueError("candidates and probs must align")
    if trace is not None:
        trace["candidates"] = [int(t) for t in candidates]
        trace["probs"] = [float(p) for p in probs]
    if candidates.size == 1:
        return int(candidates[0])
    if cfg.clip_weight == 0.0 or scorer is None or image_embedding is None:
        best = int(np.lexsort((candidates, -probs))[0])
        return int(candidates[best])

    texts = [scorer.detokenize(list(history) + [int(t)]) for t in candidates]
    embeds = np.stack([np.asarray(scorer.embed_text(t), dtype=np.float64) for t in texts])
    image_vec = np.asarray(image_embedding, dtype=np.float64)
    if not getattr(scorer, "normalized", False):
        embeds = embeds / np.linalg.norm(embeds, axis=1, keepdims=True)
    image_vec = image_vec / np.linalg.norm(image_vec)
    sims = embeds @ image_vec

    clip_scores = _softmax(cfg.sharpen * sims)
    hd_scores = probs / probs.sum()
    blended = cfg.clip_weight * clip_scores + (1.0 - cfg.clip_weight) * hd_scores
    best = int(np.lexsort((candidates, -blended))[0])
    if trace is not None:
        trace["texts"] = texts
        trace["similarities"] = [float(s) for s in sims]
        trace["clip_scores"] = [float(s) for s in clip_scores]
        trace["blended"] = [float(s) for s in blended]
    return int(candidates[best])
