"""Model-server wire protocol: length-prefixed binary frames over stdio.

Frame layout (little-endian): u32 length, then `length` bytes holding a
u8 message type followed by the payload. Requests and responses use the
same framing; a response carries the request's type or ERROR (255).

Message types and payloads:

    0 HELLO        req: empty
                   resp: u32 n_p, u32 d_I, u32 d_C, u32 vocab_size,
                         u32 pooled_dims, u8 embeddings_normalized,
                         remainder: UTF-8 JSON metadata object
    1 ENCODE_TOKENS req: u32 count, count x u32 token ids
                   resp: u32 n, n*d_C x f32 hidden states (row-major),
                         vocab_size x f32 next-token logits
    2 ENCODE_IMAGE req: u64 byte length, raw n_p*d_I x f32 patch features
                   resp: pooled_dims x f32 pooled embedding
    3 EMBED_TEXT   req: u32 byte length, UTF-8 text
                   resp: pooled_dims x f32 embedding
    4 DETOKENIZE   req: u32 count, count x u32 token ids
                   resp: UTF-8 text (rest of frame)
    5 TOKENIZE     req: u32 byte length, UTF-8 text
                   resp: u32 count, count x u32 token ids
    255 ERROR      resp only: UTF-8 message

HELLO must be the first exchange on a connection.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from hdcap.errors import ProtocolError

MSG_HELLO = 0
MSG_ENCODE_TOKENS = 1
MSG_ENCODE_IMAGE = 2
MSG_EMBED_TEXT = 3
MSG_DETOKENIZE = 4
MSG_TOKENIZE = 5
MSG_ERROR = 255

MAX_FRAME_BYTES = 256 * 1024 * 1024


@dataclass
class HelloInfo:
    """Dimensions and capabilities a server advertises in HELLO."""

    n_p: int
    d_i: int
    d_c: int
    vocab_size: int
    pooled_dims: int
    embeddings_normalized: bool
    metadata: dict = field(default_factory=dict)


def write_frame(stream: BinaryIO, msg_type: int, payload: bytes = b"") -> None:
    length = 1 + len(payload)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {length} bytes exceeds cap {MAX_FRAME_BYTES}")
    stream.write(struct.pack("<IB", length, msg_type))
    stream.write(payload)
    stream.flush()


def read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise ProtocolError(f"stream closed mid-frame ({n - remaining}/{n} bytes read)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> tuple[int, bytes] | None:
    """Next (type, payload) frame, or None on clean end of stream."""
    head = stream.read(4)
    if not head:
        return None
    if len(head) < 4:
        raise ProtocolError("stream closed inside a frame length prefix")
    (length,) = struct.unpack("<I", head)
    if length < 1:
        raise ProtocolError(f"frame length {length} is below the 1-byte minimum")
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame length {length} exceeds cap {MAX_FRAME_BYTES}")
    body = read_exact(stream, length)
    return body[0], body[1:]


# -- payload builders / parsers ------------------------------------------


def build_hello_response(info: HelloInfo) -> bytes:
    meta = json.dumps(info.metadata, sort_keys=True).encode("utf-8")
    return struct.pack("<IIIIIB", info.n_p, info.d_i, info.d_c, info.vocab_size,
                       info.pooled_dims, 1 if info.embeddings_normalized else 0) + meta


def parse_hello_response(payload: bytes) -> HelloInfo:
    if len(payload) < 21:
        raise ProtocolError(f"HELLO payload too short: {len(payload)} bytes")
    n_p, d_i, d_c, vocab, pooled, norm = struct.unpack_from("<IIIIIB", payload, 0)
    meta_raw = payload[21:]
    try:
        metadata = json.loads(meta_raw.decode("utf-8")) if meta_raw else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"HELLO metadata is not valid JSON: {exc}") from exc
    return HelloInfo(n_p, d_i, d_c, vocab, pooled, bool(norm), metadata)


def build_ids(ids: Sequence[int]) -> bytes:
    arr = np.asarray(list(ids), dtype="<u4")
    return struct.pack("<I", arr.size) + arr.tobytes()


def parse_ids(payload: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(payload) < offset + 4:
        raise ProtocolError("token id payload too short for its count field")
    (count,) = struct.unpack_from("<I", payload, offset)
    need = offset + 4 + count * 4
    if len(payload) < need:
        raise ProtocolError(f"token id payload advertises {count} ids but is truncated")
    ids = np.frombuffer(payload, dtype="<u4", count=count, offset=offset + 4)
    return ids.astype(np.int64), need


def build_sized_bytes(data: bytes, width: str = "<I") -> bytes:
    return struct.pack(width, len(data)) + data


def parse_sized_bytes(payload: bytes, width: str = "<I") -> bytes:
    head = struct.calcsize(width)
    if len(payload) < head:
        raise ProtocolError("payload too short for its length field")
    (n,) = struct.unpack_from(width, payload, 0)
    if len(payload) < head + n:
        raise ProtocolError(f"payload advertises {n} bytes but is truncated")
    return payload[head : head + n]


def build_encode_tokens_response(hidden: np.ndarray, logits: np.ndarray) -> bytes:
    hidden = np.ascontiguousarray(hidden, dtype="<f4")
    logits = np.ascontiguousarray(logits, dtype="<f4")
    return struct.pack("<I", hidden.shape[0]) + hidden.tobytes() + logits.tobytes()


def parse_encode_tokens_response(payload: bytes, d_c: int, vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    if len(payload) < 4:
        raise ProtocolError("ENCODE_TOKENS response too short")
    (n,) = struct.unpack_from("<I", payload, 0)
    need = 4 + n * d_c * 4 + vocab_size * 4
    if len(payload) != need:
        raise ProtocolError(f"ENCODE_TOKENS response is {len(payload)} bytes, expected {need}")
    hidden = np.frombuffer(payload, dtype="<f4", count=n * d_c, offset=4).reshape(n, d_c)
    logits = np.frombuffer(payload, dtype="<f4", count=vocab_size, offset=4 + n * d_c * 4)
    return hidden.copy(), logits.copy()


def parse_f32_vector(payload: bytes, expected: int, what: str) -> np.ndarray:
    if len(payload) != expected * 4:
        raise ProtocolError(f"{what} response is {len(payload)} bytes, expected {expected * 4}")
    return np.frombuffer(payload, dtype="<f4").copy()
