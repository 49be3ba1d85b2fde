"""Run manifests: every CLI command records what it ran, with what
configuration and seeds, and content digests of its inputs and outputs."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Optional

from . import __version__
from .core import dumps_record, loads_record


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # path -> sha256
    tool_version: str = __version__
    wall_time_s: Optional[float] = None

    def add_input(self, path) -> None:
        self.inputs[_norm(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.outputs[_norm(path)] = sha256_file(path)

    def to_record(self) -> dict:
        return {
            "kind": "run_manifest",
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "tool_version": self.tool_version,
            "wall_time_s": self.wall_time_s,
        }


def _norm(path) -> str:
    return os.path.basename(str(path))


def write_manifest(manifest: RunManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_record(manifest.to_record()) + "\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        rec = loads_record(fh.readline())
    if rec.get("kind") != "run_manifest":
        raise ValueError(f"{path}: not a run manifest")
    return rec
