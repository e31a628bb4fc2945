"""Autoregressive decoding against the packed prototype memory.

Per step: encode the caption so far (one causal pass), bind with the
image hypervector, scan a window of position slices for the nearest
prototypes, mix the resulting Hamming logits with language-model logits,
and hand the mixture to the sampler. Every step appends one diagnostics
entry with enough detail to replay the decode offline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hdcap.encoders import PatchFeatures, encode_image
from hdcap.hdcore import bind, hamming_batch, pack
from hdcap.lsh import ROLE_CAPTION, ROLE_IMAGE, LshProjector, positional_codes, project
from hdcap.protomem import STATE_PACKED_BITS, PrototypeMemory
from hdcap.sampler import SamplerConfig, build_candidates, select_token

DIAGNOSTICS_SCHEMA = 1

FINISH_EOS = "eos"
FINISH_FULL_STOP = "full_stop"
FINISH_MAX_LEN = "max_len"


@dataclass(frozen=True)
class DecodeConfig:
    window: int = 3
    mix_weight: float = 0.15
    max_new_tokens: int = 15
    stop_tokens: frozenset[int] = frozenset()
    stop_on_full_stop: bool = True
    top_logits_logged: int = 5

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.mix_weight < 0:
            raise ValueError("mix_weight must be >= 0")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


@dataclass
class DecodeSession:
    """Mutable state of one generation run."""

    tokens: list[int]
    prefix_len: int
    img_hv: np.ndarray
    img_embedding: np.ndarray | None = None
    finished: bool = False
    finish_reason: str | None = None
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def step(self) -> int:
        return len(self.tokens)

    @property
    def generated(self) -> int:
        return len(self.tokens) - self.prefix_len


def hd_logits(
    mem: PrototypeMemory,
    comb: np.ndarray,
    position: int,
    window: int,
    return_offsets: bool = False,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Windowed Hamming logits over the vocabulary.

    Element t is max over offsets w in [0, window) of
    beta - d_H(prototype[position + w, t], comb), offsets clamped so
    position + w stays within l_max. window=1 is the plain
    single-position formula. Optionally also returns the winning offset
    per token.
    """
    if mem.state != STATE_PACKED_BITS:
        raise ValueError("hd_logits needs a packed (binarized) memory")
    if position < 2:
        raise ValueError("prediction targets start at position 2")
    if position > mem.l_max:
        raise ValueError(f"position {position} beyond l_max {mem.l_max}")
    if window < 1:
        raise ValueError("window must be >= 1")
    query = pack(comb)
    best = None
    offsets = None
    for w in range(window):
        if position + w > mem.l_max:
            break
        counts = hamming_batch(mem.slice(position + w), query)
        logits_w = (mem.beta - counts).astype(np.float64)
        if best is None:
            best = logits_w
            offsets = np.zeros(mem.vocab_size, dtype=np.int32)
        else:
            better = logits_w > best
            best[better] = logits_w[better]
            offsets[better] = w
    if return_offsets:
        return best, offsets
    return best


def mix_logits(hd: np.ndarray, lm: np.ndarray, weight: float) -> np.ndarray:
    """Blend max-normalized retrieval logits with language-model logits.

    Each vector is divided by its own maximum; if the language-model
    maximum is not positive, the vector is shifted so its maximum becomes
    one instead (division would flip or blow up the ranking there).
    """
    hd = np.asarray(hd, dtype=np.float64)
    lm = np.asarray(lm, dtype=np.float64)
    if hd.shape != lm.shape:
        raise ValueError(f"logit shape mismatch: {hd.shape} vs {lm.shape}")
    hd_max = hd.max()
    if hd_max <= 0:
        raise ValueError("retrieval logits must have a positive maximum")
    lm_max = lm.max()
    if lm_max > 0:
        lm_norm = lm / lm_max
    else:
        lm_norm = lm + (1.0 - lm_max)
    return hd / hd_max + weight * lm_norm


@dataclass
class DecodeResult:
    tokens: list[int]
    text: str
    finish_reason: str
    diagnostics: list[dict]


def start_session(
    features: PatchFeatures,
    mem: PrototypeMemory,
    providers,
    prefix_ids: list[int],
    initial_ids: list[int] | None = None,
) -> DecodeSession:
    """Encode the image once and seed the token list with the prefix.

    initial_ids may extend the prefix with forced tokens (useful for
    probing continuations); it must start with the prefix.
    """
    vision = providers.vision
    proj_img = LshProjector(mem.seeds.lsh_image, vision.d_i, mem.beta, ROLE_IMAGE)
    codes = positional_codes(mem.seeds.positional, vision.n_p, mem.beta)
    img_hv = encode_image(features, proj_img, codes)
    img_embedding = np.asarray(vision.encode_image(features.data), dtype=np.float64)
    prefix = [int(t) for t in prefix_ids]
    if not prefix:
        raise ValueError("prefix_ids must not be empty")
    tokens = [int(t) for t in initial_ids] if initial_ids is not None else list(prefix)
    if tokens[: len(prefix)] != prefix:
        raise ValueError("initial tokens must start with the configured prefix")
    return DecodeSession(tokens=tokens, prefix_len=len(prefix), img_hv=img_hv,
                         img_embedding=img_embedding)


def decode_step(
    session: DecodeSession,
    mem: PrototypeMemory,
    providers,
    decode_cfg: DecodeConfig,
    sampler_cfg: SamplerConfig,
) -> tuple[int | None, bool]:
    """Generate one token; returns (token, finished).

    Reaching the generation cap or the end of trained positions finishes
    the session without touching the providers.
    """
    if session.finished:
        raise ValueError("session already finished")
    if session.generated >= decode_cfg.max_new_tokens or session.step + 1 > mem.l_max:
        session.finished = True
        session.finish_reason = FINISH_MAX_LEN
        return None, True

    seq = providers.sequence
    hidden, lm_logits = seq.encode_tokens(session.tokens)
    proj_cap = LshProjector(mem.seeds.lsh_caption, hidden.shape[1], mem.beta, ROLE_CAPTION)
    cap_hv = project(proj_cap, np.asarray(hidden[-1], dtype=np.float64))
    comb = bind(session.img_hv, cap_hv)
    position = session.step + 1
    hd, offsets = hd_logits(mem, comb, position, decode_cfg.window, return_offsets=True)
    mixed = mix_logits(hd, np.asarray(lm_logits, dtype=np.float64), decode_cfg.mix_weight)

    trace: dict = {}
    candidates, probs = build_candidates(mixed, session.tokens, sampler_cfg)
    token = select_token(candidates, probs, session.tokens, session.img_embedding,
                         getattr(providers, "scorer", None), sampler_cfg, trace=trace)

    top_n = min(decode_cfg.top_logits_logged, hd.shape[0])
    top_ids = np.lexsort((np.arange(hd.shape[0]), -hd))[:top_n]
    entry = {
        "schema": DIAGNOSTICS_SCHEMA,
        "step": session.step,
        "position": position,
        "top_hd": [[int(t), float(hd[t])] for t in top_ids],
        "w_star": int(offsets[token]),
        "mixed_chosen": float(mixed[token]),
        "chosen": int(token),
        **trace,
    }

    session.tokens.append(int(token))
    if token in decode_cfg.stop_tokens:
        session.finished = True
        session.finish_reason = FINISH_EOS
    elif decode_cfg.stop_on_full_stop and seq.detokenize(session.tokens).rstrip().endswith("."):
        session.finished = True
        session.finish_reason = FINISH_FULL_STOP
    elif session.generated >= decode_cfg.max_new_tokens:
        session.finished = True
        session.finish_reason = FINISH_MAX_LEN
    entry["finished"] = session.finished
    if session.finished:
        entry["finish_reason"] = session.finish_reason
    session.diagnostics.append(entry)
    return int(token), session.finished


def decode(
    features: PatchFeatures,
    mem: PrototypeMemory,
    providers,
    decode_cfg: DecodeConfig,
    sampler_cfg: SamplerConfig,
    prefix_ids: list[int],
    initial_ids: list[int] | None = None,
) -> DecodeResult:
    """Run decode_step to completion and detokenize the result."""
    session = start_session(features, mem, providers, prefix_ids, initial_ids=initial_ids)
    while not session.finished:
        decode_step(session, mem, providers, decode_cfg, sampler_cfg)
    text = providers.sequence.detokenize(session.tokens)
    return DecodeResult(tokens=list(session.tokens), text=text,
                        finish_reason=session.finish_reason or FINISH_MAX_LEN,
                        diagnostics=session.diagnostics)
