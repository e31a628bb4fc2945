"""Provider contracts (structural protocols) and the bundle wiring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np


@runtime_checkable
class SequenceEncoder(Protocol):
    """Causal token-sequence encoder with next-token logits.

    Causality contract: hidden row i is a pure function of tokens [0..i];
    changing a later token must leave rows up to i bit-identical.
    """

    d_c: int
    vocab_size: int

    def encode_tokens(self, ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """(hidden states (n, d_c) f32, next-token logits (vocab,) f32)."""
        ...

    def tokenize(self, text: str) -> list[int]: ...

    def detokenize(self, ids: Sequence[int]) -> str: ...


@runtime_checkable
class VisionEncoder(Protocol):
    """Fixed patch-count vision features and a pooled image embedding."""

    n_p: int
    d_i: int
    pooled_dims: int

    def encode_image(self, features: np.ndarray) -> np.ndarray:
        """Pool (n_p, d_i) patch features into a (pooled_dims,) embedding."""
        ...


@runtime_checkable
class TextEmbedder(Protocol):
    """Text to embedding, comparable with the pooled image embedding."""

    pooled_dims: int
    normalized: bool

    def embed_text(self, text: str) -> np.ndarray: ...


class _Scorer:
    """Candidate scorer adapter: sequence detokenizer + text embedder."""

    def __init__(self, sequence: SequenceEncoder, text: TextEmbedder):
        self._sequence = sequence
        self._text = text
        self.normalized = text.normalized

    def detokenize(self, ids: Sequence[int]) -> str:
        return self._sequence.detokenize(ids)

    def embed_text(self, text: str) -> np.ndarray:
        return self._text.embed_text(text)


@dataclass
class ProviderBundle:
    """Everything the decoder needs, from one provider family."""

    sequence: SequenceEncoder
    vision: VisionEncoder
    text: TextEmbedder

    @property
    def scorer(self) -> _Scorer:
        return _Scorer(self.sequence, self.text)
