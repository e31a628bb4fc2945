"""HDSH shard writing: pre-extracted learn records for offline learning.

Implements the engine's shard schema (little-endian): a 64-byte header
(magic "HDSH", version u32, n_p u32, d_I u32, d_C u32, record count
u64), length-prefixed record bodies (u32 n_c, token ids u32, patch
features f32, hidden states f32), a u64 offset index, and a final u64
pointing at the index.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from extractor.models import ModelBundle
from extractor.preprocess import load_image, preprocess_caption

log = logging.getLogger(__name__)

MAGIC = b"HDSH"
VERSION = 1
HEADER_SIZE = 64
_HEADER = struct.Struct("<4sIIIIQ")


class ShardWriter:
    def __init__(self, path: str, n_p: int, d_i: int, d_c: int):
        self.path = path
        self.dims = (n_p, d_i, d_c)
        self._offsets: list[int] = []
        self._fh = open(path, "wb")
        self._fh.write(b"\x00" * HEADER_SIZE)

    def append(self, token_ids: list[int], patches: np.ndarray, hidden: np.ndarray) -> None:
        n_p, d_i, d_c = self.dims
        if patches.shape != (n_p, d_i):
            raise ValueError(f"patch shape {patches.shape} != ({n_p}, {d_i})")
        if hidden.shape != (len(token_ids), d_c):
            raise ValueError(f"hidden shape {hidden.shape} != ({len(token_ids)}, {d_c})")
        ids = np.asarray(token_ids, dtype="<u4")
        body = (struct.pack("<I", ids.size) + ids.tobytes()
                + np.ascontiguousarray(patches, dtype="<f4").tobytes()
                + np.ascontiguousarray(hidden, dtype="<f4").tobytes())
        self._offsets.append(self._fh.tell())
        self._fh.write(struct.pack("<Q", len(body)))
        self._fh.write(body)

    def close(self) -> None:
        if self._fh is None:
            return
        index_offset = self._fh.tell()
        self._fh.write(np.asarray(self._offsets, dtype="<u8").tobytes())
        self._fh.write(struct.pack("<Q", index_offset))
        self._fh.seek(0)
        n_p, d_i, d_c = self.dims
        self._fh.write(_HEADER.pack(MAGIC, VERSION, n_p, d_i, d_c,
                                    len(self._offsets)).ljust(HEADER_SIZE, b"\x00"))
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._fh.close()
        self._fh = None

    def __enter__(self) -> "ShardWriter":
        return self

    def __exit__(self, exc_type, *exc) -> None:
        if exc_type is None:
            self.close()
        elif self._fh is not None:
            self._fh.close()
            self._fh = None


@dataclass
class DumpSummary:
    records: int = 0
    skipped: int = 0
    shard_path: str = ""
    meta_path: str = ""


def read_manifest(path: str) -> list[tuple[str, str]]:
    """UTF-8 lines of "path-or-url<TAB>caption"."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'path<TAB>caption'")
            source, caption = line.split("\t", 1)
            rows.append((source, caption))
    return rows


def dump_shards(manifest_path: str, bundle: ModelBundle, out_dir: str,
                max_tokens: int | None = None) -> DumpSummary:
    """Extract every manifest pair into one HDSH shard plus a meta file.

    Captions are preprocessed (lowercase, article stripped, prefix
    prepended), tokenized, and closed with the end-of-sequence token.
    Rows whose image cannot be loaded are skipped with a log line.
    """
    os.makedirs(out_dir, exist_ok=True)
    summary = DumpSummary()
    tok = bundle.tokenizer
    prefix_ids = tok.tokenize(preprocess_caption(""))
    shard_path = os.path.join(out_dir, "extract-000.hdsh")
    with ShardWriter(shard_path, bundle.n_p, bundle.d_i, bundle.d_c) as writer:
        for source, caption in read_manifest(manifest_path):
            try:
                image = load_image(source, bundle.config.image_size)
            except (OSError, ValueError) as exc:
                summary.skipped += 1
                log.warning("skipping %s: %s", source, exc)
                continue
            ids = tok.tokenize(preprocess_caption(caption)) + [tok.eos_id]
            if max_tokens is not None:
                ids = ids[:max_tokens]
            patches = bundle.vision.patch_features(image)
            hidden, _ = bundle.encode_tokens(ids)
            writer.append(ids, patches, hidden)
            summary.records += 1
    meta = {
        "n_p": bundle.n_p, "d_i": bundle.d_i, "d_c": bundle.d_c,
        "vocab_size": bundle.vocab_size, "pooled_dims": bundle.pooled_dims,
        "prefix_ids": prefix_ids, "eos_id": tok.eos_id,
        "records": summary.records, "skipped": summary.skipped,
        "models": {
            "vision": bundle.config.vision_model,
            "language": bundle.config.language_model,
            "text": bundle.config.text_model,
        },
    }
    meta_path = os.path.join(out_dir, "extract-meta.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    summary.shard_path = shard_path
    summary.meta_path = meta_path
    return summary
