"""Run manifests: enough resolved state to reproduce an artifact."""

from __future__ import annotations

import datetime
import hashlib
import json
import os

import hdcap


def _digest(path: str) -> dict:
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as fh:
        while True:
            chunk = fh.read(1 << 20)
            if not chunk:
                break
            h.update(chunk)
            size += len(chunk)
    return {"path": os.path.abspath(path), "sha256": h.hexdigest(), "bytes": size}


def write_manifest(artifact_path: str, command: str, config: dict,
                   inputs: list[str] | None = None) -> str:
    """Write <artifact>.manifest.json next to the artifact it describes."""
    doc = {
        "engine_version": hdcap.__version__,
        "command": command,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": config,
        "inputs": [_digest(p) for p in (inputs or []) if os.path.exists(p)],
    }
    out = artifact_path + ".manifest.json"
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
