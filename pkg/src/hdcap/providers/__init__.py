"""Provider interfaces isolating all frozen-model functionality.

Three families: in-process synthetic providers (deterministic, for tests
and benchmarks), shard files of pre-extracted records (offline
learning), and a client for an external model-server process speaking a
length-prefixed binary protocol on stdio.
"""

from hdcap.providers.base import ProviderBundle, SequenceEncoder, TextEmbedder, VisionEncoder

__all__ = ["ProviderBundle", "SequenceEncoder", "TextEmbedder", "VisionEncoder"]
