"""Run configuration: paper-fixed defaults plus config-file and flag overrides.

The config file is either a JSON object or a flat ``key = value`` file
(``#`` comments allowed). Flags win over file values, which win over defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    corpus: str | None = None
    transcripts_dir: str | None = None
    rating_db: str | None = None
    cache_dir: str | None = None
    output_dir: str = "out"
    group_by: tuple[str, ...] = ()
    confidence: float = 0.95
    k: int = 5
    chunk_size: int = 500
    alpha: float = 0.5
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = "GROUNDCHECK_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    rate_limit_per_minute: int | None = None
    mock_script: str | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError("confidence must be in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    if name == "group_by":
        if isinstance(value, str):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            return tuple(parts)
        return tuple(value)
    if name in ("confidence", "alpha", "timeout"):
        return float(value)
    if name in ("k", "chunk_size", "max_retries"):
        return int(value)
    if name == "rate_limit_per_minute":
        return None if value in (None, "", "none") else int(value)
    return value


def parse_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    values: dict[str, Any]
    if stripped.startswith("{"):
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    else:
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip().strip('"')
    unknown = set(values) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {sorted(unknown)}")
    return values


def build_config(
    config_path: str | Path | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    values: dict[str, Any] = {}
    if config_path is not None:
        values.update(parse_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    coerced = {name: _coerce(name, value) for name, value in values.items()}
    try:
        return replace(RunConfig(), **coerced)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
