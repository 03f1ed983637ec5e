"""
Configuration loading.

Layering, lowest first: DEFAULT_CFG, the packaged config.yaml, the preset or
user file, then ``key.path=value`` overrides from the command line.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

from ocl.config.defaults import DEFAULT_CFG
from ocl.core.errors import ConfigError
from ocl.core.utils import load_structured, load_yaml
from ocl.util.dicts import deep_merge, parse_override, set_dotted

CONFIG_DIR = Path(__file__).resolve().parent
BASE_CONFIG = CONFIG_DIR / "config.yaml"
PRESETS_DIR = CONFIG_DIR / "presets"


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESETS_DIR.glob("*.yaml"))


def resolve_config_path(ref: str | Path) -> Path:
    """An existing file path, or the name of a packaged preset."""
    p = Path(ref)
    if p.is_file():
        return p
    preset = PRESETS_DIR / f"{ref}.yaml"
    if preset.is_file():
        return preset
    raise ConfigError(f"no config file or preset named {str(ref)!r} (presets: {list_presets()})")


def load_config(ref: str | Path | None = None, overrides: Iterable[str] = ()) -> dict:
    cfg = deep_merge(DEFAULT_CFG, load_yaml(BASE_CONFIG) if BASE_CONFIG.is_file() else {})
    if ref is not None:
        path = resolve_config_path(ref)
        try:
            user = load_structured(path)
        except Exception as e:
            raise ConfigError(f"failed to parse {path} ({e})") from e
        if not isinstance(user, dict):
            raise ConfigError(f"{path} must hold a mapping at the top level")
        cfg = deep_merge(cfg, user)
    for item in overrides:
        try:
            key, value = parse_override(item)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        cfg = set_dotted(cfg, key, value)
    return cfg
