"""On-disk cache of expectation factors keyed by everything that determines them."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from core.bfim import ExpectationFactors
from utils.logger import setup_logger

FACTOR_CACHE_VERSION = 1


def factor_key(token: Mapping[str, Any]) -> str:
    canonical = json.dumps(dict(token), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:32]


class FactorCache:
    """``<cache_dir>/factors-<key>.npz`` files; unreadable or stale files count as misses."""

    def __init__(self, cache_dir: Path, *, logger=None) -> None:
        self.cache_dir = Path(cache_dir)
        self.logger = logger or setup_logger(self.__class__.__name__)

    def path_for(self, key: str) -> Path:
        return self.cache_dir / f"factors-{key}.npz"

    def load(self, key: str) -> Optional[ExpectationFactors]:
        path = self.path_for(key)
        if not path.exists():
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                if int(data["version"]) != FACTOR_CACHE_VERSION or str(data["key"]) != key:
                    self.logger.warning("Ignoring stale factor cache %s.", path)
                    return None
                factors = ExpectationFactors(
                    F_tilde=data["F_tilde"],
                    G_tilde=data["G_tilde"],
                    sample_count=int(data["sample_count"]),
                    eigenvalues_first=data["eigenvalues_first"],
                    eigenvalues_second=data["eigenvalues_second"],
                )
        except (OSError, KeyError, ValueError) as exc:
            self.logger.warning("Unreadable factor cache %s: %s", path, exc)
            return None
        self.logger.info("Factor cache hit: %s", path.name)
        return factors

    def save(self, key: str, factors: ExpectationFactors) -> Path:
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path = path.with_name(path.name + ".tmp.npz")
        np.savez(
            tmp_path,
            version=np.int64(FACTOR_CACHE_VERSION),
            key=np.str_(key),
            F_tilde=factors.F_tilde,
            G_tilde=factors.G_tilde,
            sample_count=np.int64(factors.sample_count),
            eigenvalues_first=factors.eigenvalues_first,
            eigenvalues_second=factors.eigenvalues_second,
        )
        tmp_path.replace(path)
        self.logger.info("Stored factors in %s.", path.name)
        return path
