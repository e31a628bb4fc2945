"""Client for an external model server speaking the stdio wire protocol.

Spawns the server as a child process, performs the mandatory HELLO
handshake (optionally validating advertised dimensions against the
engine configuration), then issues blocking request/response calls.
Requests on one handle are serialized; run several processes for
parallel sessions. Any protocol violation, timeout, or child exit
renders the handle dead; spawn a fresh one afterwards.
"""

from __future__ import annotations

import os
import select
import struct
import subprocess
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hdcap.errors import ProtocolError, ServerError
from hdcap.providers import wire
from hdcap.providers.base import ProviderBundle
from hdcap.providers.wire import HelloInfo


@dataclass(frozen=True)
class ExpectedDims:
    """Engine-side dims the handshake must agree with (None = don't care)."""

    n_p: int | None = None
    d_i: int | None = None
    d_c: int | None = None
    vocab_size: int | None = None
    pooled_dims: int | None = None


class ModelServerClient:
    def __init__(self, command: Sequence[str], expected: ExpectedDims | None = None,
                 timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout
        self._lock = threading.Lock()
        self._stderr_chunks: list[bytes] = []
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.PIPE, bufsize=0,
        )
        self._stderr_thread = threading.Thread(target=self._drain_stderr, daemon=True)
        self._stderr_thread.start()
        try:
            self.hello = self._handshake(expected)
        except BaseException:
            self.close()
            raise

    # -- transport -------------------------------------------------------

    def _drain_stderr(self) -> None:
        stream = self._proc.stderr
        while True:
            chunk = stream.read(65536)
            if not chunk:
                return
            self._stderr_chunks.append(chunk)

    def stderr_text(self) -> str:
        return b"".join(self._stderr_chunks).decode("utf-8", "replace")

    def _fail(self, message: str) -> ProtocolError:
        detail = self.stderr_text().strip()
        if detail:
            message = f"{message}\nserver stderr:\n{detail}"
        return ProtocolError(message)

    def _read_exact(self, n: int) -> bytes:
        fd = self._proc.stdout.fileno()
        chunks: list[bytes] = []
        remaining = n
        while remaining:
            ready, _, _ = select.select([fd], [], [], self.timeout)
            if not ready:
                self._proc.kill()
                raise self._fail(f"model server timed out after {self.timeout}s")
            chunk = os.read(fd, remaining)
            if not chunk:
                code = self._proc.poll()
                raise self._fail(f"model server closed its stream (exit code {code})")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def request_raw(self, msg_type: int, payload: bytes = b"") -> tuple[int, bytes]:
        """One framed request/response exchange; no payload validation."""
        with self._lock:
            if self._proc.poll() is not None:
                raise self._fail(f"model server already exited with code {self._proc.returncode}")
            try:
                self._proc.stdin.write(struct.pack("<IB", 1 + len(payload), msg_type))
                self._proc.stdin.write(payload)
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise self._fail(f"model server pipe failed: {exc}") from exc
            head = self._read_exact(4)
            (length,) = struct.unpack("<I", head)
            if not 1 <= length <= wire.MAX_FRAME_BYTES:
                self._proc.kill()
                raise self._fail(f"model server sent malformed frame length {length}")
            body = self._read_exact(length)
            return body[0], body[1:]

    def _request(self, msg_type: int, payload: bytes = b"") -> bytes:
        rtype, body = self.request_raw(msg_type, payload)
        if rtype == wire.MSG_ERROR:
            raise ServerError(body.decode("utf-8", "replace"))
        if rtype != msg_type:
            raise self._fail(f"response type {rtype} does not match request type {msg_type}")
        return body

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "ModelServerClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- handshake ---------------------------------------------------------

    def _handshake(self, expected: ExpectedDims | None) -> HelloInfo:
        info = wire.parse_hello_response(self._request(wire.MSG_HELLO))
        if expected is not None:
            pairs = [
                ("n_p", expected.n_p, info.n_p),
                ("d_I", expected.d_i, info.d_i),
                ("d_C", expected.d_c, info.d_c),
                ("vocab_size", expected.vocab_size, info.vocab_size),
                ("pooled_dims", expected.pooled_dims, info.pooled_dims),
            ]
            bad = [f"{name}: want {want}, server has {got}"
                   for name, want, got in pairs if want is not None and want != got]
            if bad:
                raise ProtocolError("handshake dimension mismatch; " + "; ".join(bad))
        return info

    # -- typed calls ----------------------------------------------------------

    def encode_tokens(self, ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        body = self._request(wire.MSG_ENCODE_TOKENS, wire.build_ids(ids))
        return wire.parse_encode_tokens_response(body, self.hello.d_c, self.hello.vocab_size)

    def encode_image(self, features: np.ndarray) -> np.ndarray:
        raw = np.ascontiguousarray(features, dtype="<f4").tobytes()
        body = self._request(wire.MSG_ENCODE_IMAGE, wire.build_sized_bytes(raw, "<Q"))
        return wire.parse_f32_vector(body, self.hello.pooled_dims, "ENCODE_IMAGE")

    def embed_text(self, text: str) -> np.ndarray:
        body = self._request(wire.MSG_EMBED_TEXT, wire.build_sized_bytes(text.encode("utf-8")))
        return wire.parse_f32_vector(body, self.hello.pooled_dims, "EMBED_TEXT")

    def detokenize(self, ids: Sequence[int]) -> str:
        return self._request(wire.MSG_DETOKENIZE, wire.build_ids(ids)).decode("utf-8")

    def tokenize(self, text: str) -> list[int]:
        body = self._request(wire.MSG_TOKENIZE, wire.build_sized_bytes(text.encode("utf-8")))
        ids, _ = wire.parse_ids(body)
        return [int(t) for t in ids]

    # -- provider views ----------------------------------------------------------

    def providers(self) -> ProviderBundle:
        return ProviderBundle(
            sequence=_ClientSequenceEncoder(self),
            vision=_ClientVisionEncoder(self),
            text=_ClientTextEmbedder(self),
        )


class _ClientSequenceEncoder:
    def __init__(self, client: ModelServerClient):
        self._client = client
        self.d_c = client.hello.d_c
        self.vocab_size = client.hello.vocab_size

    def encode_tokens(self, ids):
        return self._client.encode_tokens(ids)

    def tokenize(self, text):
        return self._client.tokenize(text)

    def detokenize(self, ids):
        return self._client.detokenize(ids)


class _ClientVisionEncoder:
    def __init__(self, client: ModelServerClient):
        self._client = client
        self.n_p = client.hello.n_p
        self.d_i = client.hello.d_i
        self.pooled_dims = client.hello.pooled_dims

    def encode_image(self, features):
        features = np.asarray(features, dtype=np.float32)
        if features.shape != (self.n_p, self.d_i):
            raise ValueError(f"features shape {features.shape} != ({self.n_p}, {self.d_i})")
        return self._client.encode_image(features)


class _ClientTextEmbedder:
    def __init__(self, client: ModelServerClient):
        self._client = client
        self.pooled_dims = client.hello.pooled_dims
        self.normalized = client.hello.embeddings_normalized

    def embed_text(self, text):
        return self._client.embed_text(text)


def model_server_client(command: Sequence[str], expected: ExpectedDims | None = None,
                        timeout: float = 60.0) -> ModelServerClient:
    """Spawn a model server and complete the HELLO handshake."""
    return ModelServerClient(command, expected=expected, timeout=timeout)
