"""Hyperdimensional caption engine.

Single-pass associative learning over (image-features, token-sequence)
pairs and autoregressive caption decoding by bit-packed Hamming retrieval
from a disk-resident prototype memory. Frozen foundation models are kept
behind provider interfaces (synthetic, shard files, or an external model
server speaking a binary stdio protocol).
"""

__version__ = "0.1.0"

from hdcap.errors import DataError, ProtocolError, StateError

__all__ = ["DataError", "ProtocolError", "StateError", "__version__"]
