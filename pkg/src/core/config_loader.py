import copy
import hashlib
import json
import os
from typing import Any, Dict, Optional

import toml

from .errors import ConfigError

CONFIG_PATH = os.path.join(os.path.dirname(__file__), "..", "config", "config.toml")


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class Config:
    """
    Layered TOML configuration: packaged defaults < user file < overrides.
    """

    def __init__(self, data: Optional[Dict[str, Any]] = None):
        if data is None:
            data = self._read(CONFIG_PATH)
        self._config_data: Dict[str, Any] = data

    @staticmethod
    def _read(path: str) -> Dict[str, Any]:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found at {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                return toml.load(f)
        except toml.TomlDecodeError as e:
            raise ConfigError(f"Invalid TOML in {path}: {e}") from e

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> "Config":
        data = cls._read(CONFIG_PATH)
        if path:
            data = _deep_merge(data, cls._read(path))
        cfg = cls(data)
        if overrides:
            cfg = cfg.with_overrides(overrides)
        return cfg

    def with_overrides(self, overrides: Dict[str, Any]) -> "Config":
        """Returns a copy with dotted keys ("retrieval.mode") replaced."""
        data = copy.deepcopy(self._config_data)
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for k in parents:
                node = node.setdefault(k, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"Cannot override {dotted}: {k} is not a table")
            node[leaf] = value
        return Config(data)

    def get(self, key: str, default: Any = None) -> Any:
        # Support nested keys like "gateway.retry_limit"
        keys = key.split(".")
        value = self._config_data
        try:
            for k in keys:
                if value is None:
                    return default
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def section(self, key: str) -> Dict[str, Any]:
        value = self.get(key, {})
        return dict(value) if isinstance(value, dict) else {}

    def as_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self._config_data)

    def digest(self) -> str:
        canonical = json.dumps(self._config_data, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

