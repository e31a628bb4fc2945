"""Wire protocol implementation: length-prefixed frames over stdio.

Independent implementation of the engine's model-server protocol.
Frames are little-endian: u32 length, then `length` bytes of u8 message
type plus payload. HELLO must be the first exchange on a connection.

    0 HELLO        -> u32 n_p, u32 d_I, u32 d_C, u32 vocab_size,
                      u32 pooled_dims, u8 normalized, JSON metadata
    1 ENCODE_TOKENS   u32 count, ids        -> u32 n, n*d_C f32, |V| f32
    2 ENCODE_IMAGE    u64 len, raw f32      -> pooled_dims f32
    3 EMBED_TEXT      u32 len, UTF-8        -> pooled_dims f32
    4 DETOKENIZE      u32 count, ids        -> UTF-8
    5 TOKENIZE        u32 len, UTF-8        -> u32 count, ids
    255 ERROR         UTF-8 message (response only)
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO, Sequence

import numpy as np

HELLO = 0
ENCODE_TOKENS = 1
ENCODE_IMAGE = 2
EMBED_TEXT = 3
DETOKENIZE = 4
TOKENIZE = 5
ERROR = 255

MAX_FRAME_BYTES = 256 * 1024 * 1024


class FrameError(Exception):
    """Framing-level failure; the stream can no longer be trusted."""


def read_frame(stream: BinaryIO) -> tuple[int, bytes] | None:
    head = stream.read(4)
    if not head:
        return None
    if len(head) < 4:
        raise FrameError("stream closed inside a length prefix")
    (length,) = struct.unpack("<I", head)
    if not 1 <= length <= MAX_FRAME_BYTES:
        raise FrameError(f"bad frame length {length}")
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            raise FrameError("stream closed mid-frame")
        body += chunk
    return body[0], body[1:]


def write_frame(stream: BinaryIO, msg_type: int, payload: bytes = b"") -> None:
    stream.write(struct.pack("<IB", 1 + len(payload), msg_type))
    stream.write(payload)
    stream.flush()


def hello_payload(n_p: int, d_i: int, d_c: int, vocab_size: int, pooled_dims: int,
                  normalized: bool, metadata: dict) -> bytes:
    head = struct.pack("<IIIIIB", n_p, d_i, d_c, vocab_size, pooled_dims,
                       1 if normalized else 0)
    return head + json.dumps(metadata, sort_keys=True).encode("utf-8")


def parse_ids(payload: bytes) -> np.ndarray:
    if len(payload) < 4:
        raise ValueError("token payload too short for its count field")
    (count,) = struct.unpack_from("<I", payload, 0)
    if len(payload) < 4 + 4 * count:
        raise ValueError(f"token payload advertises {count} ids but is truncated")
    return np.frombuffer(payload, dtype="<u4", count=count, offset=4).astype(np.int64)


def ids_payload(ids: Sequence[int]) -> bytes:
    arr = np.asarray(list(ids), dtype="<u4")
    return struct.pack("<I", arr.size) + arr.tobytes()


def parse_sized(payload: bytes, width: str = "<I") -> bytes:
    head = struct.calcsize(width)
    if len(payload) < head:
        raise ValueError("payload too short for its length field")
    (n,) = struct.unpack_from(width, payload, 0)
    if len(payload) < head + n:
        raise ValueError(f"payload advertises {n} bytes but is truncated")
    return payload[head : head + n]


def encode_tokens_payload(hidden: np.ndarray, logits: np.ndarray) -> bytes:
    hidden = np.ascontiguousarray(hidden, dtype="<f4")
    logits = np.ascontiguousarray(logits, dtype="<f4")
    return struct.pack("<I", hidden.shape[0]) + hidden.tobytes() + logits.tobytes()


def f32_payload(vec: np.ndarray) -> bytes:
    return np.ascontiguousarray(vec, dtype="<f4").tobytes()
