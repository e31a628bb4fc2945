"""Reference model server and shard dumper for the caption engine.

Hosts frozen encoders (vision patch features, causal language model,
text embeddings) behind the engine's length-prefixed stdio protocol,
and dumps pre-extracted learn records as HDSH shards for offline
learning. Models are used strictly in inference mode; weights never
change.
"""

__version__ = "0.1.0"
