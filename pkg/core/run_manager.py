from __future__ import annotations

from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional

from core.default_config import EXPERIMENT_SCHEMA_VERSION
from models.run_record import RunRecord
from storage.factor_cache import FACTOR_CACHE_VERSION
from storage.file_storage import FileStorage
from utils.config_loader import load_config
from utils.logger import setup_logger

MANIFEST_NAME = "manifest.json"
_TRACKED_PACKAGES = ("numpy", "scipy", "cvxpy", "clarabel")


def artifact_versions() -> Dict[str, str]:
    versions = {
        "experiment_schema": str(EXPERIMENT_SCHEMA_VERSION),
        "factor_cache": str(FACTOR_CACHE_VERSION),
    }
    for package in _TRACKED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


@dataclass
class RunManifest:
    """What a run read, which seeds it used and which files it wrote."""

    command: str
    config_hash: str
    seeds: List[int]
    output_dir: str
    outputs: List[str] = field(default_factory=list)
    status: str = "ok"
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    wall_clock_s: float = 0.0
    versions: Dict[str, str] = field(default_factory=artifact_versions)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write(self, storage: FileStorage) -> Path:
        path = Path(self.output_dir) / MANIFEST_NAME
        if not storage.save_json(path, self.to_dict(), backup=False):
            raise OSError(f"could not write run manifest {path}")
        return path


class RunManager:
    """Keep the run history in ``<data_dir>/runs.json`` or, with a session factory, in the ``runs`` table."""

    def __init__(
        self,
        config_file: str = "config.yml",
        *,
        config: Optional[Mapping[str, Any]] = None,
        db_session_factory: Optional[Callable[[], Any]] = None,
        logger=None,
    ) -> None:
        self.config_path = Path(config_file)
        self.config = dict(config) if config else load_config(self.config_path)

        base_dir = self.config_path.parent
        paths_cfg = self.config["paths"]
        self.data_dir = self._resolve_path(paths_cfg["data_dir"], base=base_dir)
        self.log_dir = self._resolve_path(paths_cfg.get("log_dir", "data/logs"), base=base_dir)
        self.cache_dir = self._resolve_path(paths_cfg.get("cache_dir", "data/cache"), base=base_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_dir.mkdir(parents=True, exist_ok=True)

        self.runs_file = self.data_dir / "runs.json"

        self.logger = logger or setup_logger(self.__class__.__name__, log_dir=self.log_dir)
        self.storage = FileStorage(logger=self.logger)
        self.db_session_factory = db_session_factory
        self.use_db = bool(self.db_session_factory)

    def record_run(self, manifest: RunManifest) -> Dict[str, Any]:
        """Append a run summary to the history and return it."""
        entry = {key: value for key, value in manifest.to_dict().items() if key != "versions"}
        if self.use_db:
            session = self._session()
            try:
                session.add(RunRecord.from_mapping(entry))
                session.commit()
            except Exception:
                session.rollback()
                raise
            finally:
                session.close()
        else:
            runs = self.storage.load_json(self.runs_file)
            runs.append(entry)
            if not self.storage.save_json(self.runs_file, runs):
                self.logger.error("Run history not updated for %s.", manifest.command)
                return entry
        self.logger.info("Recorded %s run (%s) with %d output(s).", manifest.command, manifest.status, len(manifest.outputs))
        return entry

    def list_runs(self, command: Optional[str] = None) -> List[Dict[str, Any]]:
        if self.use_db:
            session = self._session()
            try:
                query = session.query(RunRecord)
                if command:
                    query = query.filter(RunRecord.command == command)
                return [record.to_dict() for record in query.order_by(RunRecord.id).all()]
            finally:
                session.close()

        runs = self.storage.load_json(self.runs_file)
        if command:
            runs = [run for run in runs if run.get("command") == command]
        return runs

    @staticmethod
    def _resolve_path(path_value: str, *, base: Path) -> Path:
        path = Path(path_value)
        if not path.is_absolute():
            path = (base / path).resolve()
        return path

    def _session(self):
        if not self.db_session_factory:
            raise RuntimeError("Database session factory is not configured.")
        return self.db_session_factory()
