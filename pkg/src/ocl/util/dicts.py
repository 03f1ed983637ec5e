from __future__ import annotations

from typing import Any

import yaml


def deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def set_dotted(cfg: dict, dotted: str, value: Any) -> dict:
    """Copy of `cfg` with ``a.b.c`` set to `value`, creating sections as needed."""
    keys = dotted.split(".")
    patch: dict = {}
    node = patch
    for k in keys[:-1]:
        node[k] = {}
        node = node[k]
    node[keys[-1]] = value
    return deep_merge(cfg, patch)


def parse_override(item: str) -> tuple[str, Any]:
    """``key.path=value`` with the value parsed as a YAML scalar or list."""
    if "=" not in item:
        raise ValueError(f"override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ValueError(f"cannot parse value of {key.strip()!r}: {e}") from e
