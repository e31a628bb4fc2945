"""Frozen encoder stack: vision patch features, causal LM, text embedder.

Model ids starting with "standin/" build small, seeded, randomly
initialized instances of public architectures locally, so the server
runs without a model hub: a ViT-style patch embedder for vision, a GPT-2
causal LM for sequences, and an embedding-table text encoder. Any other
id is loaded through transformers from a local cache or hub.

Everything runs in inference mode on a fixed device with fixed seeds.
The frozen contract is observable: weights_checksum() is invariant
across any request sequence. Advertised dimensions are probed from real
model outputs at load time and must match any dims declared in the
config.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from extractor.wordlist import WORDS

PAD, UNK, EOS = "<pad>", "<unk>", "<eos>"
_PUNCT = (".", ",", "!", "?")


class WordTokenizer:
    """Lowercase word-level tokenizer with detachable trailing punctuation.

    detokenize is a right inverse of tokenize on in-vocabulary text:
    tokenize(detokenize(ids)) == ids.
    """

    def __init__(self) -> None:
        seen: list[str] = [PAD, UNK, EOS, *_PUNCT]
        for w in WORDS:
            if w not in seen:
                seen.append(w)
        self.vocab = seen
        self.word_to_id = {w: i for i, w in enumerate(seen)}
        self.pad_id = self.word_to_id[PAD]
        self.unk_id = self.word_to_id[UNK]
        self.eos_id = self.word_to_id[EOS]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def tokenize(self, text: str) -> list[int]:
        ids: list[int] = []
        for raw in text.lower().split():
            tail: list[str] = []
            while raw and raw[-1] in _PUNCT:
                tail.append(raw[-1])
                raw = raw[:-1]
            if raw:
                ids.append(self.word_to_id.get(raw, self.unk_id))
            ids.extend(self.word_to_id[p] for p in reversed(tail))
        return ids

    def detokenize(self, ids: Sequence[int]) -> str:
        parts: list[str] = []
        for i in ids:
            word = self.vocab[int(i)]
            if word in _PUNCT and parts:
                parts[-1] += word
            else:
                parts.append(word)
        return " ".join(parts)


class PatchVision(nn.Module):
    """ViT-style patchifier: conv patch embedding, CLS token, layer norm.

    A 3x512x512 image becomes (n_p, d_i) patch features with
    n_p = (512 / patch)**2 + 1 (CLS first), plus a pooled projection
    head used for image-text similarity.
    """

    def __init__(self, d_i: int, patch: int, pooled_dims: int, image_size: int):
        super().__init__()
        self.image_size = image_size
        self.patch_embed = nn.Conv2d(3, d_i, kernel_size=patch, stride=patch)
        self.cls_token = nn.Parameter(torch.randn(d_i))
        self.norm = nn.LayerNorm(d_i)
        self.pool_head = nn.Linear(d_i, pooled_dims)
        self.n_p = (image_size // patch) ** 2 + 1
        self.d_i = d_i
        self.pooled_dims = pooled_dims

    @torch.no_grad()
    def patch_features(self, image: np.ndarray) -> np.ndarray:
        """(H, W, 3) float32 in [0, 1] -> (n_p, d_i) float32."""
        if image.shape != (self.image_size, self.image_size, 3):
            raise ValueError(f"image shape {image.shape} != "
                             f"({self.image_size}, {self.image_size}, 3)")
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        x = x.permute(2, 0, 1).unsqueeze(0)
        patches = self.patch_embed(x).flatten(2).transpose(1, 2)[0]
        tokens = torch.cat([self.cls_token[None, :], patches], dim=0)
        return self.norm(tokens).numpy().astype(np.float32)

    @torch.no_grad()
    def pool(self, features: np.ndarray) -> np.ndarray:
        """(n_p, d_i) features -> unit-norm (pooled_dims,) embedding."""
        x = torch.from_numpy(np.ascontiguousarray(features, dtype=np.float32))
        pooled = self.pool_head(x.mean(dim=0))
        pooled = pooled / pooled.norm()
        return pooled.numpy().astype(np.float32)


class TextEmbed(nn.Module):
    """Embedding-table text encoder pooled into the image-text space."""

    def __init__(self, vocab_size: int, pooled_dims: int):
        super().__init__()
        self.table = nn.Embedding(vocab_size, pooled_dims)
        self.pooled_dims = pooled_dims

    @torch.no_grad()
    def embed_ids(self, ids: Sequence[int]) -> np.ndarray:
        if not len(ids):
            raise ValueError("cannot embed empty text")
        vec = self.table(torch.tensor(list(ids), dtype=torch.long)).mean(dim=0)
        vec = vec / vec.norm()
        return vec.numpy().astype(np.float32)


@dataclass
class ServerConfig:
    """Model selection plus the dims advertised in HELLO.

    Declared dims are optional; when present they are verified against
    probe outputs of the actual models at load time.
    """

    vision_model: str = "standin/patch16-48"
    language_model: str = "standin/causal-64x2"
    text_model: str = "standin/embed-32"
    device: str = "cpu"
    seed: int = 0
    image_size: int = 512
    n_p: int | None = None
    d_i: int | None = None
    d_c: int | None = None
    pooled_dims: int | None = None
    vocab_size: int | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ServerConfig":
        return cls(**json.loads(text))


def _standin_params(model_id: str, pattern: str, what: str) -> tuple[int, ...]:
    m = re.fullmatch(pattern, model_id)
    if not m:
        raise ValueError(f"unrecognized {what} id: {model_id!r}")
    return tuple(int(g) for g in m.groups())


class ModelBundle:
    """The three frozen models plus the tokenizer, ready to serve."""

    def __init__(self, config: ServerConfig):
        if config.device != "cpu" and not torch.cuda.is_available():
            raise RuntimeError(f"device {config.device!r} not available")
        self.config = config
        self.device = torch.device(config.device)
        torch.manual_seed(config.seed)
        self.tokenizer = WordTokenizer()
        self.lm = self._load_language_model(config.language_model)
        self.vision = self._load_vision_model(config.vision_model)
        self.text = self._load_text_model(config.text_model)
        for model in (self.lm, self.vision, self.text):
            model.eval()
            for p in model.parameters():
                p.requires_grad_(False)
        self._probe_and_verify()

    # -- model construction -------------------------------------------

    def _load_language_model(self, model_id: str):
        if model_id.startswith("standin/"):
            from transformers import GPT2Config, GPT2LMHeadModel

            d_c, n_layer = _standin_params(model_id, r"standin/causal-(\d+)x(\d+)",
                                           "language model")
            cfg = GPT2Config(
                vocab_size=self.tokenizer.vocab_size,
                n_embd=d_c, n_layer=n_layer, n_head=max(1, d_c // 32),
                n_positions=256,
                bos_token_id=self.tokenizer.eos_id,
                eos_token_id=self.tokenizer.eos_id,
            )
            return GPT2LMHeadModel(cfg).to(self.device)
        from transformers import AutoModelForCausalLM

        return AutoModelForCausalLM.from_pretrained(model_id).to(self.device)

    def _load_vision_model(self, model_id: str):
        if model_id.startswith("standin/"):
            patch, d_i = _standin_params(model_id, r"standin/patch(\d+)-(\d+)",
                                         "vision model")
            pooled = self.config.pooled_dims or 32
            return PatchVision(d_i, patch, pooled, self.config.image_size).to(self.device)
        raise ValueError(f"hub vision backbones are not wired up yet: {model_id!r}")

    def _load_text_model(self, model_id: str):
        if model_id.startswith("standin/"):
            (pooled,) = _standin_params(model_id, r"standin/embed-(\d+)", "text model")
            declared = self.config.pooled_dims
            if declared is not None and declared != pooled:
                raise ValueError(f"text model pooled dims {pooled} != declared {declared}")
            return TextEmbed(self.tokenizer.vocab_size, pooled).to(self.device)
        raise ValueError(f"hub text embedders are not wired up yet: {model_id!r}")

    # -- probing ----------------------------------------------------------

    def _probe_and_verify(self) -> None:
        probe_image = np.zeros((self.config.image_size, self.config.image_size, 3),
                               dtype=np.float32)
        feats = self.vision.patch_features(probe_image)
        pooled = self.vision.pool(feats)
        hidden, logits = self.encode_tokens([self.tokenizer.eos_id, self.tokenizer.unk_id])
        text_vec = self.text.embed_ids([self.tokenizer.eos_id])
        self.n_p, self.d_i = feats.shape
        self.d_c = hidden.shape[1]
        self.pooled_dims = pooled.shape[0]
        self.vocab_size = logits.shape[0]
        if text_vec.shape[0] != self.pooled_dims:
            raise ValueError(
                f"text embedding width {text_vec.shape[0]} != image pooled width "
                f"{self.pooled_dims}; similarity needs one space")
        declared = {
            "n_p": self.config.n_p, "d_i": self.config.d_i, "d_c": self.config.d_c,
            "pooled_dims": self.config.pooled_dims, "vocab_size": self.config.vocab_size,
        }
        actual = {
            "n_p": self.n_p, "d_i": self.d_i, "d_c": self.d_c,
            "pooled_dims": self.pooled_dims, "vocab_size": self.vocab_size,
        }
        bad = [f"{k}: declared {v}, probe found {actual[k]}"
               for k, v in declared.items() if v is not None and v != actual[k]]
        if bad:
            raise ValueError("config dims disagree with model outputs; " + "; ".join(bad))

    # -- inference --------------------------------------------------------

    @torch.no_grad()
    def encode_tokens(self, ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """All-position hidden states plus last-position next-token logits."""
        ids = [int(t) for t in ids]
        if not ids:
            raise ValueError("cannot encode an empty token sequence")
        if min(ids) < 0 or max(ids) >= self.tokenizer.vocab_size:
            raise ValueError(f"token id out of range [0, {self.tokenizer.vocab_size})")
        batch = torch.tensor([ids], dtype=torch.long, device=self.device)
        out = self.lm(batch, output_hidden_states=True)
        hidden = out.hidden_states[-1][0].cpu().numpy().astype(np.float32)
        logits = out.logits[0, -1].cpu().numpy().astype(np.float32)
        return hidden, logits

    def embed_text(self, text: str) -> np.ndarray:
        return self.text.embed_ids(self.tokenizer.tokenize(text))

    def hello_metadata(self) -> dict:
        return {
            "server": "extractor",
            "vision_model": self.config.vision_model,
            "language_model": self.config.language_model,
            "text_model": self.config.text_model,
            "pooling": "mean+linear",
            "raw_image": False,
            "cls_index": 0,
            "image_size": self.config.image_size,
        }

    def weights_checksum(self) -> str:
        """Digest over every parameter and buffer; frozen-contract probe."""
        h = hashlib.sha256()
        for model in (self.lm, self.vision, self.text):
            state = model.state_dict()
            for key in sorted(state):
                h.update(key.encode("utf-8"))
                h.update(state[key].cpu().numpy().tobytes())
        return h.hexdigest()
