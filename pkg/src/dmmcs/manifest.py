"""Run manifests: resolved config, input digests, seed, and phase timings.

A manifest is written alongside every command output; rerunning a command
with the same manifest inputs must reproduce the outputs byte-identically
(timings are the only varying part and live in the manifest, never in the
outputs).
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

ENGINE_VERSION = "0.1.0"


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class PhaseTimer:
    """Accumulates wall-clock milliseconds per named phase."""

    def __init__(self):
        self.timings_ms: dict[str, float] = {}

    def phase(self, name: str):
        timer = self

        class _Phase:
            def __enter__(self):
                self._start = time.perf_counter()
                return self

            def __exit__(self, *exc):
                elapsed = (time.perf_counter() - self._start) * 1000.0
                timer.timings_ms[name] = timer.timings_ms.get(name, 0.0) + elapsed

        return _Phase()


def build_manifest(command: str, config: dict, input_paths, seed=None,
                   timings_ms: dict | None = None) -> dict:
    manifest = {
        "command": command,
        "config": config,
        "engine_version": ENGINE_VERSION,
        "inputs": {str(p): file_digest(p) for p in input_paths},
        "seed": seed,
    }
    if timings_ms is not None:
        manifest["timings_ms"] = timings_ms
    return manifest


def write_manifest(manifest: dict, out_path: str | Path) -> Path:
    """Write <out>.manifest.json next to an output file."""
    path = Path(str(out_path) + ".manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    return path
