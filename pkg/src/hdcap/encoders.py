"""Composition of LSH sketches into image and caption hypervectors.

The image encoder binds each projected patch sketch with its positional
code and bundles across patches. The caption encoder projects every
causal hidden state in one pass (equivalent to re-encoding each prefix,
because the language model is causal). Combining the two is a plain
bind, queried later against the prototype memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hdcap.hdcore import TieRule, bind, binarize
from hdcap.lsh import ROLE_CAPTION, ROLE_IMAGE, LshProjector, project_block


@dataclass(frozen=True)
class PatchFeatures:
    """Fixed-count patch feature matrix for one image, shape (n_p, d_I)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 2 or min(self.data.shape) == 0:
            raise ValueError(f"patch features must be a non-empty 2-D matrix, got {self.data.shape}")

    @property
    def n_p(self) -> int:
        return self.data.shape[0]

    @property
    def d_i(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class CaptionHiddenStates:
    """Per-position causal hidden states aligned with token ids.

    Row i is the hidden state after consuming tokens[0..i]; providers
    guarantee it does not depend on later tokens.
    """

    data: np.ndarray
    token_ids: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        if self.data.ndim != 2:
            raise ValueError(f"hidden states must be 2-D, got {self.data.shape}")
        if self.data.shape[0] != len(self.token_ids):
            raise ValueError(
                f"{self.data.shape[0]} hidden rows vs {len(self.token_ids)} token ids"
            )
        if self.data.shape[0] < 2:
            raise ValueError("need at least 2 positions (prefix plus one target)")

    @property
    def n_c(self) -> int:
        return self.data.shape[0]

    @property
    def d_c(self) -> int:
        return self.data.shape[1]


def encode_image(
    features: PatchFeatures,
    proj: LshProjector,
    codes: np.ndarray,
    tie: TieRule = TieRule.PLUS_ONE,
) -> np.ndarray:
    """Bundle positional-bound patch sketches into one image hypervector.

    codes is the (n_p, beta) positional code matrix; the patch count is
    fixed per configuration and must match it exactly. With an odd patch
    count the bundle can never tie, so the result is tie-rule independent.
    """
    if proj.role != ROLE_IMAGE:
        raise ValueError(f"image encoder needs an image projector, got role {proj.role!r}")
    if features.n_p != codes.shape[0]:
        raise ValueError(f"patch count {features.n_p} != positional code count {codes.shape[0]}")
    if proj.output_dims != codes.shape[1]:
        raise ValueError(f"projector beta {proj.output_dims} != code beta {codes.shape[1]}")
    sketches = project_block(proj, features.data)
    bound = np.multiply(sketches, codes, dtype=np.int8)  # bipolar product stays in int8
    return binarize(bound.sum(axis=0, dtype=np.int32), tie)


def encode_caption_positions(hidden: CaptionHiddenStates, proj: LshProjector) -> np.ndarray:
    """Project every caption position's hidden state; (n_c, beta) int8."""
    if proj.role != ROLE_CAPTION:
        raise ValueError(f"caption encoder needs a caption projector, got role {proj.role!r}")
    return project_block(proj, hidden.data)


def combine(img_hv: np.ndarray, cap_hv: np.ndarray) -> np.ndarray:
    """Bind image and caption-context hypervectors into the joint cue."""
    return bind(img_hv, cap_hv)


def all_plus_one(dims: int) -> np.ndarray:
    """Binding identity element."""
    return np.ones(dims, dtype=np.int8)
