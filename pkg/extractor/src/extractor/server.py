"""Request loop: frozen models behind the stdio wire protocol.

Answers frames until end of input. The first exchange must be HELLO.
Per-request failures produce an ERROR frame and the loop continues;
model loading failures produce an ERROR frame and a nonzero exit;
framing desync ends the process.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from extractor import protocol
from extractor.models import ModelBundle, ServerConfig


def handle_request(bundle: ModelBundle, msg_type: int, payload: bytes,
                   handshook: bool) -> tuple[int, bytes]:
    if not handshook and msg_type != protocol.HELLO:
        raise ValueError("HELLO must be the first exchange")
    if msg_type == protocol.HELLO:
        return protocol.HELLO, protocol.hello_payload(
            bundle.n_p, bundle.d_i, bundle.d_c, bundle.vocab_size,
            bundle.pooled_dims, normalized=True, metadata=bundle.hello_metadata())
    if msg_type == protocol.ENCODE_TOKENS:
        ids = protocol.parse_ids(payload)
        hidden, logits = bundle.encode_tokens(ids)
        return protocol.ENCODE_TOKENS, protocol.encode_tokens_payload(hidden, logits)
    if msg_type == protocol.ENCODE_IMAGE:
        raw = protocol.parse_sized(payload, "<Q")
        expected = bundle.n_p * bundle.d_i * 4
        if len(raw) != expected:
            raise ValueError(f"feature payload is {len(raw)} bytes, expected {expected}")
        features = np.frombuffer(raw, dtype="<f4").reshape(bundle.n_p, bundle.d_i)
        return protocol.ENCODE_IMAGE, protocol.f32_payload(bundle.vision.pool(features))
    if msg_type == protocol.EMBED_TEXT:
        text = protocol.parse_sized(payload).decode("utf-8")
        return protocol.EMBED_TEXT, protocol.f32_payload(bundle.embed_text(text))
    if msg_type == protocol.DETOKENIZE:
        ids = protocol.parse_ids(payload)
        return protocol.DETOKENIZE, bundle.tokenizer.detokenize(ids).encode("utf-8")
    if msg_type == protocol.TOKENIZE:
        text = protocol.parse_sized(payload).decode("utf-8")
        return protocol.TOKENIZE, protocol.ids_payload(bundle.tokenizer.tokenize(text))
    raise ValueError(f"unknown message type {msg_type}")


def serve(bundle: ModelBundle, stdin, stdout) -> None:
    handshook = False
    while True:
        frame = protocol.read_frame(stdin)
        if frame is None:
            return
        msg_type, payload = frame
        try:
            rtype, body = handle_request(bundle, msg_type, payload, handshook)
        except Exception as exc:
            protocol.write_frame(stdout, protocol.ERROR, str(exc).encode("utf-8"))
            continue
        if rtype == protocol.HELLO:
            handshook = True
        protocol.write_frame(stdout, rtype, body)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="frozen-encoder model server")
    parser.add_argument("--config", default=None, help="ServerConfig JSON file")
    args = parser.parse_args(argv)
    try:
        if args.config:
            with open(args.config, "r", encoding="utf-8") as fh:
                config = ServerConfig.from_json(fh.read())
        else:
            config = ServerConfig()
        bundle = ModelBundle(config)
    except Exception as exc:
        protocol.write_frame(sys.stdout.buffer, protocol.ERROR,
                             f"model load failed: {exc}".encode("utf-8"))
        return 1
    serve(bundle, sys.stdin.buffer, sys.stdout.buffer)
    return 0


if __name__ == "__main__":
    sys.exit(main())
