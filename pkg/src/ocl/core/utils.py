from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import yaml


def load_yaml(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def load_structured(path: str | Path) -> dict:
    """YAML or JSON by suffix."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        with open(p, "r", encoding="utf-8") as f:
            return json.load(f)
    return load_yaml(p)


def dump_yaml(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)


def git_blob_sha1(data: bytes) -> str:
    """Content hash in git's blob format (``blob <len>\\0<data>``)."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def run_dir(out_dir: str | Path, preset: str, strategy: str, seed: int) -> Path:
    return Path(out_dir) / preset / strategy / f"seed_{seed}"


def ensure_dirs(*paths):
    for p in paths:
        os.makedirs(p, exist_ok=True)
