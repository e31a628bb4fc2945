"""Deterministic synthetic world: clustered images, causal caption states.

Builds a tiny captioning universe from word templates. Every quantity is
a pure function of the world seed:

* vocabulary: "<eos>" plus the sorted template and synonym words
* token embeddings: seeded Gaussian rows; a synonym is constructed at an
  exact configured cosine to its base word
* caption hidden states: running prefix mean of token embeddings pushed
  through a fixed random matrix, causal by construction, float32
* language-model logits: dot products of the last hidden state against
  the embedded vocabulary
* images: per-template, per-position Gaussian cluster centers plus
  within-cluster noise, so images of one template look alike
* pooled image embedding and text embeddings: fixed linear maps into a
  shared space, unit-normalized

The same functions back the in-process providers and the stub model
server, so the two are bit-identical for equal configurations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from hdcap.encoders import CaptionHiddenStates, PatchFeatures
from hdcap.errors import DataError
from hdcap.learner import LearnRecord
from hdcap.lsh import splitmix64
from hdcap.providers.base import ProviderBundle

EOS_WORD = "<eos>"

_SALT_LM_EMBED = 0x11
_SALT_HIDDEN_MAP = 0x22
_SALT_CLIP_WORDS = 0x33
_SALT_IMG_POOL = 0x44
_SALT_CENTERS = 0x55
_SALT_NOISE_TRAIN = 0x66
_SALT_NOISE_HELDOUT = 0x77

_NOISE_SALTS = {"train": _SALT_NOISE_TRAIN, "heldout": _SALT_NOISE_HELDOUT}


def _gen(seed: int, *salts: int) -> np.random.Generator:
    key = seed & ((1 << 64) - 1)
    for s in salts:
        key = splitmix64(key ^ s)
    return np.random.Generator(np.random.Philox(key=[key, splitmix64(key)]))


@dataclass(frozen=True)
class WorldConfig:
    seed: int
    templates: tuple[tuple[str, ...], ...]
    prefix: tuple[str, ...] = ("this", "image", "shows")
    synonyms: tuple[tuple[str, str], ...] = ()  # (alias, base) pairs
    n_p: int = 9
    d_i: int = 32
    d_c: int = 48
    d_emb: int = 24
    pooled_dims: int = 16
    sigma: float = 0.1
    synonym_cos: float = 0.95

    def __post_init__(self) -> None:
        templates = tuple(tuple(t) for t in self.templates)
        object.__setattr__(self, "templates", templates)
        object.__setattr__(self, "prefix", tuple(self.prefix))
        object.__setattr__(self, "synonyms", tuple((a, b) for a, b in self.synonyms))
        if len(templates) < 1:
            raise ValueError("need at least one template")
        if len(set(templates)) != len(templates):
            raise DataError("degenerate templates: duplicates present")
        for t in templates:
            if tuple(t[: len(self.prefix)]) != self.prefix:
                raise DataError(f"template {t} does not start with the shared prefix {self.prefix}")
            if len(t) <= len(self.prefix):
                raise DataError(f"template {t} has no tokens beyond the prefix")
        if len(templates) > 1 and len({tuple(t) for t in templates}) < 2:
            raise DataError("templates must differ in at least one slot token")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WorldConfig":
        raw = json.loads(text)
        return cls(**raw)


class SyntheticWorld:
    """All derived tables and providers for one WorldConfig."""

    def __init__(self, config: WorldConfig):
        self.config = config
        words = {w for t in config.templates for w in t}
        words.update(alias for alias, _ in config.synonyms)
        words.update(base for _, base in config.synonyms)
        words.discard(EOS_WORD)
        self.vocab: list[str] = [EOS_WORD] + sorted(words)
        self.word_to_id = {w: i for i, w in enumerate(self.vocab)}
        self.eos_id = self.word_to_id[EOS_WORD]
        self.prefix_ids = tuple(self.word_to_id[w] for w in config.prefix)
        self.vocab_size = len(self.vocab)

        self._lm_embed = self._embedding_table(_SALT_LM_EMBED, config.d_emb)
        self._clip_words = self._embedding_table(_SALT_CLIP_WORDS, config.pooled_dims)
        g = _gen(config.seed, _SALT_HIDDEN_MAP)
        self._hidden_map = (g.standard_normal((config.d_c, config.d_emb)) /
                            np.sqrt(config.d_emb)).astype(np.float32)
        self._lm_head = (self._lm_embed @ self._hidden_map.T).astype(np.float32)
        g = _gen(config.seed, _SALT_IMG_POOL)
        self._img_pool = (g.standard_normal((config.pooled_dims, config.d_i)) /
                          np.sqrt(config.d_i)).astype(np.float32)
        g = _gen(config.seed, _SALT_CENTERS)
        self._centers = g.standard_normal(
            (len(config.templates), config.n_p, config.d_i)).astype(np.float32)

    def _embedding_table(self, salt: int, dims: int) -> np.ndarray:
        cfg = self.config
        g = _gen(cfg.seed, salt)
        table = g.standard_normal((self.vocab_size, dims)).astype(np.float32)
        # Rebuild synonym rows at an exact cosine to their base word.
        for alias, base in cfg.synonyms:
            a, b = self.word_to_id[alias], self.word_to_id[base]
            bv = table[b].astype(np.float64)
            raw = table[a].astype(np.float64)
            b_hat = bv / np.linalg.norm(bv)
            orth = raw - (raw @ b_hat) * b_hat
            orth /= np.linalg.norm(orth)
            c = cfg.synonym_cos
            table[a] = (np.linalg.norm(bv) * (c * b_hat + np.sqrt(1 - c * c) * orth)).astype(
                np.float32)
        return table

    # -- caption side ----------------------------------------------------

    def caption_ids(self, template_index: int, append_eos: bool = True) -> tuple[int, ...]:
        words = self.config.templates[template_index]
        ids = [self.word_to_id[w] for w in words]
        if append_eos:
            ids.append(self.eos_id)
        return tuple(ids)

    def encode_tokens(self, ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        ids = np.asarray(list(ids), dtype=np.int64)
        if ids.size == 0:
            raise ValueError("cannot encode an empty token sequence")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise DataError(f"token id out of range [0, {self.vocab_size})")
        rows = self._lm_embed[ids]
        counts = np.arange(1, ids.size + 1, dtype=np.float32)[:, None]
        prefix_mean = np.cumsum(rows, axis=0, dtype=np.float32) / counts
        hidden = prefix_mean @ self._hidden_map.T
        logits = self._lm_head @ hidden[-1]
        return hidden.astype(np.float32), logits.astype(np.float32)

    def tokenize(self, text: str) -> list[int]:
        out = []
        for word in text.split():
            if word not in self.word_to_id:
                raise DataError(f"word not in synthetic vocabulary: {word!r}")
            out.append(self.word_to_id[word])
        return out

    def detokenize(self, ids: Sequence[int]) -> str:
        try:
            return " ".join(self.vocab[int(i)] for i in ids)
        except IndexError as exc:
            raise DataError(f"token id out of range [0, {self.vocab_size})") from exc

    # -- image side -------------------------------------------------------

    def image_features(self, kind: str, template_index: int, image_index: int) -> PatchFeatures:
        cfg = self.config
        if kind not in _NOISE_SALTS:
            raise ValueError(f"kind must be one of {sorted(_NOISE_SALTS)}")
        g = _gen(cfg.seed, _NOISE_SALTS[kind], template_index + 1, image_index + 1)
        noise = g.standard_normal((cfg.n_p, cfg.d_i)).astype(np.float32)
        return PatchFeatures(self._centers[template_index] + cfg.sigma * noise)

    def pooled_image_embedding(self, features: np.ndarray) -> np.ndarray:
        pooled = self._img_pool @ np.asarray(features, dtype=np.float32).mean(axis=0)
        return (pooled / np.linalg.norm(pooled)).astype(np.float32)

    def embed_text(self, text: str) -> np.ndarray:
        ids = self.tokenize(text)
        if not ids:
            raise DataError("cannot embed empty text")
        vec = self._clip_words[np.asarray(ids)].mean(axis=0)
        return (vec / np.linalg.norm(vec)).astype(np.float32)

    # -- records ------------------------------------------------------------

    def record(self, kind: str, template_index: int, image_index: int) -> LearnRecord:
        patches = self.image_features(kind, template_index, image_index)
        ids = self.caption_ids(template_index)
        hidden, _ = self.encode_tokens(ids)
        return LearnRecord(patches=patches, token_ids=ids,
                           hidden=CaptionHiddenStates(hidden, ids))

    def training_records(self, n_per_template: int) -> Iterator[LearnRecord]:
        """Template-interleaved stream: record k covers template k % T."""
        n_templates = len(self.config.templates)
        for k in range(n_per_template * n_templates):
            yield self.record("train", k % n_templates, k // n_templates)

    def heldout_set(self, n_per_template: int) -> list[tuple[int, PatchFeatures]]:
        out = []
        n_templates = len(self.config.templates)
        for k in range(n_per_template * n_templates):
            t = k % n_templates
            out.append((t, self.image_features("heldout", t, k // n_templates)))
        return out

    # -- providers -----------------------------------------------------------

    def providers(self) -> ProviderBundle:
        return ProviderBundle(
            sequence=SyntheticSequenceEncoder(self),
            vision=SyntheticVisionEncoder(self),
            text=SyntheticTextEmbedder(self),
        )


class SyntheticSequenceEncoder:
    def __init__(self, world: SyntheticWorld):
        self._world = world
        self.d_c = world.config.d_c
        self.vocab_size = world.vocab_size

    def encode_tokens(self, ids):
        return self._world.encode_tokens(ids)

    def tokenize(self, text):
        return self._world.tokenize(text)

    def detokenize(self, ids):
        return self._world.detokenize(ids)


class SyntheticVisionEncoder:
    def __init__(self, world: SyntheticWorld):
        self._world = world
        self.n_p = world.config.n_p
        self.d_i = world.config.d_i
        self.pooled_dims = world.config.pooled_dims

    def encode_image(self, features):
        features = np.asarray(features, dtype=np.float32)
        if features.shape != (self.n_p, self.d_i):
            raise ValueError(f"features shape {features.shape} != ({self.n_p}, {self.d_i})")
        return self._world.pooled_image_embedding(features)


class SyntheticTextEmbedder:
    normalized = True

    def __init__(self, world: SyntheticWorld):
        self._world = world
        self.pooled_dims = world.config.pooled_dims

    def embed_text(self, text):
        return self._world.embed_text(text)


def synthetic_world(
    seed: int,
    templates: Sequence[Sequence[str]],
    n_images_per_template: int,
    prefix: Sequence[str] = ("this", "image", "shows"),
    n_heldout_per_template: int = 0,
    **config_overrides,
) -> tuple[SyntheticWorld, list[LearnRecord], list[tuple[int, PatchFeatures]]]:
    """Build a world plus its training records and held-out images."""
    config = WorldConfig(seed=seed, templates=tuple(tuple(t) for t in templates),
                         prefix=tuple(prefix), **config_overrides)
    world = SyntheticWorld(config)
    records = list(world.training_records(n_images_per_template))
    heldout = world.heldout_set(n_heldout_per_template) if n_heldout_per_template else []
    return world, records, heldout
