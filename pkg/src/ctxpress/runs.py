"""Run directories, manifests, and seed discipline.

Every CLI subcommand writes its work into a run directory laid out as::

    manifest.txt    flat key=value record of what ran (append-only)
    config.txt      flat key=value snapshot of the effective configuration
    metrics.csv     (eval-style commands)
    checkpoints/    (training commands)
    plots/          (plot command)

One global seed fans out to per-component streams through
:func:`seed_for`, which hashes ``"{seed}/{name}"`` with SHA-256 and keeps the
low 64 bits. Any single stage is therefore reproducible in isolation from the
global seed plus its component name.
"""

from __future__ import annotations

import hashlib
import time
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def seed_for(seed: int, name: str) -> int:
    """Derive a component seed from the global seed and a component name."""
    digest = hashlib.sha256(f"{seed}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(seed_for(seed, name))


def content_hash(paths) -> str:
    """SHA-256 over the bytes of the given input files, in order."""
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).name.encode("utf-8"))
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def format_kv(pairs: dict) -> str:
    lines = [f"{key}={value}" for key, value in pairs.items()]
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


class RunDir:
    """A managed output directory with a manifest."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)

    def write_manifest(
        self,
        command: str,
        config: dict,
        seed: int,
        inputs=(),
        parent: str = "",
        extra: dict | None = None,
    ) -> None:
        record = {
            "format_version": FORMAT_VERSION,
            "command": command,
            "seed": seed,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "inputs_hash": content_hash(inputs) if inputs else "",
            "parent": parent,
        }
        for key, value in (extra or {}).items():
            record[key] = value
        for key in sorted(config):
            record[f"config.{key}"] = config[key]
        manifest = self.path / "manifest.txt"
        with manifest.open("a", encoding="utf-8") as fh:
            if manifest.stat().st_size > 0:
                fh.write("\n")
            fh.write(format_kv(record))
        (self.path / "config.txt").write_text(
            format_kv({k: config[k] for k in sorted(config)}), encoding="utf-8"
        )

    def subdir(self, name: str) -> Path:
        d = self.path / name
        d.mkdir(parents=True, exist_ok=True)
        return d
