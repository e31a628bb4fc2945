"""Bundled stub model server: the synthetic world behind the wire protocol.

Run as `python -m hdcap.providers.stub_server --world world.json`. The
stub answers frames until end of input. Per-request failures produce an
ERROR frame and the loop continues; a framing-level desync ends the
process. Fault modes exist solely to exercise client error paths.
"""

from __future__ import annotations

import argparse
import struct
import sys

import numpy as np

from hdcap.providers import wire
from hdcap.providers.synthetic import SyntheticWorld, WorldConfig

FAULT_MODES = ("none", "bad-length", "truncate", "wrong-type", "always-error")


def _hello_info(world: SyntheticWorld) -> wire.HelloInfo:
    cfg = world.config
    return wire.HelloInfo(
        n_p=cfg.n_p, d_i=cfg.d_i, d_c=cfg.d_c,
        vocab_size=world.vocab_size, pooled_dims=cfg.pooled_dims,
        embeddings_normalized=True,
        metadata={"server": "hdcap-stub", "pooling": "mean", "raw_image": False},
    )


def handle_request(world: SyntheticWorld, msg_type: int, payload: bytes) -> tuple[int, bytes]:
    """Pure request dispatch; raises on malformed payloads."""
    if msg_type == wire.MSG_HELLO:
        return wire.MSG_HELLO, wire.build_hello_response(_hello_info(world))
    if msg_type == wire.MSG_ENCODE_TOKENS:
        ids, _ = wire.parse_ids(payload)
        hidden, logits = world.encode_tokens(ids)
        return wire.MSG_ENCODE_TOKENS, wire.build_encode_tokens_response(hidden, logits)
    if msg_type == wire.MSG_ENCODE_IMAGE:
        raw = wire.parse_sized_bytes(payload, "<Q")
        cfg = world.config
        if len(raw) != cfg.n_p * cfg.d_i * 4:
            raise ValueError(f"feature payload is {len(raw)} bytes, expected {cfg.n_p * cfg.d_i * 4}")
        features = np.frombuffer(raw, dtype="<f4").reshape(cfg.n_p, cfg.d_i)
        pooled = world.pooled_image_embedding(features)
        return wire.MSG_ENCODE_IMAGE, np.ascontiguousarray(pooled, dtype="<f4").tobytes()
    if msg_type == wire.MSG_EMBED_TEXT:
        text = wire.parse_sized_bytes(payload).decode("utf-8")
        vec = world.embed_text(text)
        return wire.MSG_EMBED_TEXT, np.ascontiguousarray(vec, dtype="<f4").tobytes()
    if msg_type == wire.MSG_DETOKENIZE:
        ids, _ = wire.parse_ids(payload)
        return wire.MSG_DETOKENIZE, world.detokenize(ids).encode("utf-8")
    if msg_type == wire.MSG_TOKENIZE:
        text = wire.parse_sized_bytes(payload).decode("utf-8")
        return wire.MSG_TOKENIZE, wire.build_ids(world.tokenize(text))
    raise ValueError(f"unknown message type {msg_type}")


def _respond_faulty(stdout, mode: str, msg_type: int, payload: bytes) -> None:
    if mode == "bad-length":
        stdout.write(struct.pack("<I", 0xFFFFFFF0))
        stdout.write(b"\x00" * 16)
        stdout.flush()
    elif mode == "truncate":
        stdout.write(struct.pack("<IB", 1 + 100, msg_type))
        stdout.write(b"\x00" * 10)  # 90 bytes short, then EOF
        stdout.flush()
        sys.exit(0)
    elif mode == "wrong-type":
        wire.write_frame(stdout, 77, payload)
    elif mode == "always-error":
        wire.write_frame(stdout, wire.MSG_ERROR, b"injected fault")


def serve(world: SyntheticWorld, stdin, stdout, fault: str = "none") -> None:
    while True:
        frame = wire.read_frame(stdin)
        if frame is None:
            return
        msg_type, payload = frame
        if fault != "none":
            _respond_faulty(stdout, fault, msg_type, payload)
            continue
        try:
            rtype, body = handle_request(world, msg_type, payload)
        except Exception as exc:  # answer with ERROR, keep serving
            wire.write_frame(stdout, wire.MSG_ERROR, str(exc).encode("utf-8"))
            continue
        wire.write_frame(stdout, rtype, body)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="synthetic-world stub model server")
    parser.add_argument("--world", required=True, help="world config JSON file")
    parser.add_argument("--fault", choices=FAULT_MODES, default="none",
                        help="inject a protocol fault instead of answering")
    args = parser.parse_args(argv)
    with open(args.world, "r", encoding="utf-8") as fh:
        world = SyntheticWorld(WorldConfig.from_json(fh.read()))
    serve(world, sys.stdin.buffer, sys.stdout.buffer, fault=args.fault)
    return 0


if __name__ == "__main__":
    sys.exit(main())
