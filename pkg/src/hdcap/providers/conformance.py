"""Conformance suite every model server must pass.

Covers the handshake, the causality contract on hidden states, tokenizer
round-trips, and recovery from malformed requests. The same checks run
against the bundled stub and against external servers (the reference
extractor among them).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hdcap.errors import ProtocolError, ServerError
from hdcap.providers import wire
from hdcap.providers.client import ExpectedDims, ModelServerClient


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append(CheckResult(name, ok, detail))

    def summary(self) -> str:
        lines = [f"[{'PASS' if c.ok else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else "")
                 for c in self.checks]
        return "\n".join(lines)


def causality_bit_identical(seq_encoder, base_ids: Sequence[int], change_at: int,
                            replacement: int) -> bool:
    """Hidden rows before change_at must not move when that token changes.

    Both sequences have equal length, so a deterministic server must
    reproduce the shared prefix rows bit for bit.
    """
    alt_ids = list(base_ids)
    if alt_ids[change_at] == replacement:
        raise ValueError("replacement token must differ from the original")
    alt_ids[change_at] = replacement
    hidden_a, _ = seq_encoder.encode_tokens(list(base_ids))
    hidden_b, _ = seq_encoder.encode_tokens(alt_ids)
    a = np.asarray(hidden_a[:change_at], dtype=np.float32)
    b = np.asarray(hidden_b[:change_at], dtype=np.float32)
    return a.tobytes() == b.tobytes()


def run_conformance(
    command: Sequence[str],
    expected: ExpectedDims | None = None,
    sample_text: str | None = None,
    timeout: float = 120.0,
) -> ConformanceReport:
    """Drive a server command through the full conformance suite."""
    report = ConformanceReport()

    try:
        client = ModelServerClient(command, expected=expected, timeout=timeout)
    except ProtocolError as exc:
        report.add("handshake", False, str(exc))
        return report
    with client:
        hello = client.hello
        report.add("handshake", True,
                   f"n_p={hello.n_p} d_I={hello.d_i} d_C={hello.d_c} "
                   f"|V|={hello.vocab_size} pooled={hello.pooled_dims}")

        # Causality probe: flip the last token, earlier rows must hold.
        try:
            base = [i % max(2, hello.vocab_size) for i in range(6)]
            replacement = (base[-1] + 1) % hello.vocab_size
            ok = causality_bit_identical(client, base, change_at=len(base) - 1,
                                         replacement=replacement)
            report.add("causality", ok, "" if ok else "prefix hidden rows moved")
        except (ProtocolError, ServerError) as exc:
            report.add("causality", False, str(exc))

        # Tokenizer round trip on server-provided text when none is given.
        try:
            text = sample_text if sample_text is not None else client.detokenize(
                [i % max(2, hello.vocab_size) for i in range(4)])
            ids = client.tokenize(text)
            round_text = client.detokenize(ids)
            ids2 = client.tokenize(round_text)
            ok = ids == ids2
            report.add("tokenize-round-trip", ok,
                       f"{text!r} -> {len(ids)} ids" if ok else f"{ids} != {ids2}")
        except (ProtocolError, ServerError) as exc:
            report.add("tokenize-round-trip", False, str(exc))

        # Fault injection: malformed requests earn ERROR frames, and the
        # server keeps answering well-formed ones afterwards.
        try:
            rtype, _ = client.request_raw(77, b"junk")
            unknown_ok = rtype == wire.MSG_ERROR
            rtype, _ = client.request_raw(wire.MSG_ENCODE_TOKENS, b"\xff\xff\xff\x7f")
            truncated_ok = rtype == wire.MSG_ERROR
            client.detokenize([0])
            report.add("fault-injection", unknown_ok and truncated_ok,
                       "" if unknown_ok and truncated_ok else
                       f"unknown-type->ERROR: {unknown_ok}, truncated->ERROR: {truncated_ok}")
        except (ProtocolError, ServerError) as exc:
            report.add("fault-injection", False, f"server did not survive malformed input: {exc}")

    return report
