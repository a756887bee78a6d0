from __future__ import annotations

import json
import os
import sys
from copy import deepcopy
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import yaml

from core.default_config import default_config_copy

SETTINGS_JSON_ENV = "SECURE_ISAC_SETTINGS_JSON"
SETTINGS_PATH_ENV = "SECURE_ISAC_SETTINGS_PATH"


def load_config(base_path: str | Path = "config.yml", *, custom_name: str = "custom.yml") -> dict[str, Any]:
    """
    Load application settings with the following precedence:
    1. Built-in defaults (core/default_config.py).
    2. Environment overrides (inline JSON or a path to a settings file).
    3. Optional base settings file (config.yml/config.json).
    4. Optional custom overrides (custom.yml/custom.json) next to the base file,
       the script or the working directory.
    """
    config = default_config_copy()

    env_json = os.environ.get(SETTINGS_JSON_ENV)
    env_path = os.environ.get(SETTINGS_PATH_ENV)
    if env_json:
        config = deep_merge(config, json.loads(env_json))
    elif env_path:
        path = Path(env_path)
        if not path.exists():
            raise FileNotFoundError(f"Environment settings path '{env_path}' not found.")
        config = deep_merge(config, read_config_file(path))

    base_file = _find_file(Path(base_path))
    base_dir = None
    if base_file:
        config = deep_merge(config, read_config_file(base_file))
        base_dir = base_file.parent

    custom_file = _find_file(Path(custom_name), extra_dirs=_candidate_dirs(base_dir))
    if custom_file:
        config = deep_merge(config, read_config_file(custom_file))

    return config


def deep_merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    merged = deepcopy(dict(base))
    for key, value in overrides.items():
        if key in merged and isinstance(merged[key], Mapping) and isinstance(value, Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = deepcopy(value)
    return merged


def read_config_file(path: Path) -> Mapping[str, Any]:
    """Parse a YAML or JSON mapping from disk."""
    path = Path(path)
    suffix = path.suffix.lower()
    with path.open("r", encoding="utf-8") as fp:
        if suffix in {".yml", ".yaml"}:
            data = yaml.safe_load(fp) or {}
        elif suffix == ".json":
            data = json.load(fp)
        else:
            raise ValueError(f"Unsupported config format: {path}")
    if not isinstance(data, Mapping):
        raise ValueError(f"Configuration file {path} must contain a mapping.")
    return data


def dump_config(path: Path, data: Mapping[str, Any]) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fp:
        if suffix in {".yml", ".yaml"}:
            yaml.safe_dump(dict(data), fp, allow_unicode=True, sort_keys=False)
        elif suffix == ".json":
            json.dump(data, fp, ensure_ascii=False, indent=2)
        else:
            raise ValueError(f"Unsupported config format: {path}")


def _candidate_dirs(base_dir: Optional[Path]) -> list[Path]:
    dirs = []
    if base_dir:
        dirs.append(base_dir)
    dirs.append(Path(sys.argv[0]).resolve().parent)
    dirs.append(Path.cwd())
    return dirs


def _find_file(path: Path, *, extra_dirs: Iterable[Path] = ()) -> Optional[Path]:
    candidates: list[Path] = [path, *_alternate_paths(path)]
    for directory in extra_dirs:
        candidates.append(directory / path.name)
        candidates.extend(_alternate_paths(directory / path.name))

    seen: set[Path] = set()
    for candidate in candidates:
        try:
            resolved = candidate.resolve()
        except OSError:
            resolved = candidate
        if resolved in seen:
            continue
        seen.add(resolved)
        if candidate.is_file():
            return candidate
    return None


def _alternate_paths(path: Path) -> list[Path]:
    suffix = path.suffix.lower()
    base = path.with_suffix("")
    if suffix == ".json":
        return [base.with_suffix(".yml"), base.with_suffix(".yaml")]
    if suffix in {".yml", ".yaml"}:
        return [base.with_suffix(".json")]
    return []
