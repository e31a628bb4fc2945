"""Protocol conformance: the running server against the engine's suite."""

import subprocess
import sys

import pytest

hdcap_conformance = pytest.importorskip(
    "hdcap.providers.conformance",
    reason="engine package needed to drive its conformance suite")
from hdcap.providers.client import ExpectedDims, ModelServerClient  # noqa: E402


def server_command(config_file):
    return [sys.executable, "-m", "extractor.server", "--config", config_file]


class TestConformance:
    def test_full_suite_passes(self, config_file, bundle):
        report = hdcap_conformance.run_conformance(
            server_command(config_file),
            expected=ExpectedDims(n_p=bundle.n_p, d_i=bundle.d_i, d_c=bundle.d_c,
                                  vocab_size=bundle.vocab_size,
                                  pooled_dims=bundle.pooled_dims),
            sample_text="this image shows new car on road.",
        )
        assert report.passed, report.summary()
        assert [c.name for c in report.checks] == [
            "handshake", "causality", "tokenize-round-trip", "fault-injection"]


class TestServerBehavior:
    def test_hello_metadata_records_pooling_and_cls(self, config_file):
        with ModelServerClient(server_command(config_file)) as client:
            assert client.hello.metadata["pooling"] == "mean+linear"
            assert client.hello.metadata["cls_index"] == 0
            assert client.hello.embeddings_normalized

    def test_hello_must_come_first(self, config_file, bundle):
        # A raw non-HELLO first request earns an ERROR frame.
        import struct

        proc = subprocess.Popen(server_command(config_file),
                                stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        try:
            ids = struct.pack("<I", 1) + struct.pack("<I", 0)
            frame = bytes([4]) + ids
            proc.stdin.write(struct.pack("<I", len(frame)) + frame)
            proc.stdin.flush()
            head = proc.stdout.read(4)
            (length,) = struct.unpack("<I", head)
            body = proc.stdout.read(length)
            assert body[0] == 255
            assert b"HELLO" in body[1:]
        finally:
            proc.stdin.close()
            proc.wait(timeout=10)

    def test_encode_tokens_matches_in_process(self, config_file, bundle):
        ids = bundle.tokenizer.tokenize("this image shows dog on grass")
        local_hidden, local_logits = bundle.encode_tokens(ids)
        with ModelServerClient(server_command(config_file)) as client:
            remote_hidden, remote_logits = client.encode_tokens(ids)
        assert local_hidden.tobytes() == remote_hidden.tobytes()
        assert local_logits.tobytes() == remote_logits.tobytes()

    def test_error_frame_then_server_continues(self, config_file):
        with ModelServerClient(server_command(config_file)) as client:
            from hdcap.errors import ServerError

            with pytest.raises(ServerError, match="out of range"):
                client.encode_tokens([10_000_000])
            assert client.detokenize(client.tokenize("new car")) == "new car"

    def test_model_load_failure_reports_error_frame(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"language_model": "standin/causal-64x2", '
                       '"vision_model": "standin/patch32-48", '
                       '"text_model": "standin/embed-32", "d_c": 12345}')
        from hdcap.errors import ProtocolError

        with pytest.raises(ProtocolError, match="disagree|load failed|closed"):
            ModelServerClient(server_command(str(bad)))
