"""Exception types shared across the engine.

Plain contract violations (dimension mismatches, bad arguments) raise
ValueError; the classes here mark conditions the CLI maps to distinct
exit codes and that callers may want to catch separately.
"""


class DataError(Exception):
    """Malformed or inconsistent input data (records, files, headers)."""


class StateError(Exception):
    """Operation applied to a memory in the wrong lifecycle state."""


class ProtocolError(Exception):
    """Model-server wire protocol violation or transport failure."""


class ServerError(ProtocolError):
    """Explicit ERROR frame returned by a model server."""
