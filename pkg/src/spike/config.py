"""Layered settings: explicit flags > environment > TOML file > defaults."""
from __future__ import annotations

import os
import sys
from typing import Any, Dict, Mapping, Optional

from .model import ContractError, PathLike

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# (section, key) -> environment variable
ENV_OVERLAYS = {
    ("embedding", "endpoint"): "EMBEDDING_ENDPOINT",
    ("chat", "endpoint"): "CHAT_ENDPOINT",
    ("generator", "endpoint"): "CHAT_ENDPOINT",
    ("judge", "endpoint"): "CHAT_ENDPOINT",
}


def load_toml(path: Optional[PathLike]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ContractError(f"invalid config file {path}: {exc}") from exc


class Settings:
    def __init__(self, file_values: Optional[Mapping[str, Any]] = None, env: Optional[Mapping[str, str]] = None):
        self.file = dict(file_values or {})
        self.env = os.environ if env is None else env

    @classmethod
    def from_file(cls, path: Optional[PathLike]) -> "Settings":
        return cls(load_toml(path))

    def get(self, section: Optional[str], key: str, flag: Any = None, default: Any = None) -> Any:
        if flag is not None:
            return flag
        env_name = ENV_OVERLAYS.get((section or "", key))
        if env_name and self.env.get(env_name):
            return self.env[env_name]
        table = self.file.get(section, {}) if section else self.file
        if isinstance(table, Mapping) and table.get(key) is not None:
            return table[key]
        return default
