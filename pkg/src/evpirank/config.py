"""Plain `key = value` run configuration with typed accessors.

Unknown keys are rejected so typos fail fast. Every command logs its fully
resolved configuration before running.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .training import TrainConfig


class ConfigError(ValueError):
    pass


VALID_KEYS: dict[str, type] = {
    "hidden_dim": int,
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "patience": int,
    "seed": int,
    "clamp_negative_sim": bool,
}

DEFAULTS: dict[str, object] = {
    "hidden_dim": 100,
    "lr": 1e-3,
    "batch_size": 32,
    "epochs": 50,
    "patience": 5,
    "seed": 0,
    "clamp_negative_sim": True,
}

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _check_key(key: str) -> None:
    if key not in VALID_KEYS:
        valid = ", ".join(sorted(VALID_KEYS))
        raise ConfigError(f"unknown config key {key!r}; valid keys: {valid}")


def _parse(key: str, raw: str):
    typ = VALID_KEYS[key]
    try:
        if typ is bool:
            lowered = raw.strip().lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None


@dataclass
class Config:
    values: dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "Config":
        config = cls()
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, raw = stripped.partition("=")
            if not sep:
                raise ConfigError(f"{path}: line {lineno}: expected `key = value`")
            key = key.strip()
            _check_key(key)
            config.values[key] = _parse(key, raw.strip())
        return config

    def set_override(self, assignment: str) -> None:
        """Apply one `key=value` override from the command line."""
        key, sep, raw = assignment.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value, got {assignment!r}")
        key = key.strip()
        _check_key(key)
        self.values[key] = _parse(key, raw.strip())

    def get(self, key: str):
        _check_key(key)
        return self.values.get(key, DEFAULTS[key])

    def resolved(self) -> dict[str, object]:
        return {key: self.get(key) for key in sorted(VALID_KEYS)}

    def resolved_json(self) -> str:
        return json.dumps({"config": self.resolved()}, ensure_ascii=False)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            hidden_dim=self.get("hidden_dim"),
            lr=self.get("lr"),
            batch_size=self.get("batch_size"),
            epochs=self.get("epochs"),
            patience=self.get("patience"),
            seed=self.get("seed"),
            clamp_negative_sim=self.get("clamp_negative_sim"),
        )
