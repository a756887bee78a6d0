"""Database configuration and session management for the optional run-history store."""

from __future__ import annotations

import logging

from sqlalchemy import create_engine, text
from sqlalchemy.orm import declarative_base, sessionmaker
from sqlalchemy.pool import NullPool

from core.errors import ConfigurationError

Base = declarative_base()


class Database:
    """Database connection manager."""

    def __init__(self, config: dict):
        """
        Args:
            config: Root settings dict; ``database.url`` is a full SQLAlchemy URL
                (``sqlite:///data/runs.db`` for a local file) and ``database.echo``
                enables SQL echo for debugging.
        """
        self.config = config
        self._engine = None
        self._session_factory = None

    @property
    def url(self) -> str:
        return str(self.config.get("database", {}).get("url") or "")

    def get_engine(self):
        """Get or create SQLAlchemy engine."""
        if self._engine is None:
            if not self.url:
                raise ConfigurationError("no database URL configured", field="database.url")
            db_config = self.config.get("database", {})
            engine_kwargs = {
                "pool_pre_ping": True,
                "echo": bool(db_config.get("echo", False)),
            }
            if self.url.startswith("sqlite"):
                engine_kwargs["poolclass"] = NullPool
                engine_kwargs["connect_args"] = {"check_same_thread": False}
            self._engine = create_engine(self.url, **engine_kwargs)
        return self._engine

    def get_session_factory(self):
        """Get or create session factory."""
        if self._session_factory is None:
            self._session_factory = sessionmaker(bind=self.get_engine(), autocommit=False, autoflush=False)
        return self._session_factory

    def create_tables(self):
        # models register themselves on Base at import time
        import models.run_record  # noqa: F401

        Base.metadata.create_all(bind=self.get_engine())

    def test_connection(self) -> bool:
        try:
            with self.get_engine().connect() as conn:
                conn.execute(text("SELECT 1"))
            return True
        except Exception as exc:
            logging.getLogger("Database").error("Database connection test failed: %s", exc)
            return False

    def dispose(self) -> None:
        if self._engine is not None:
            self._engine.dispose()
        self._engine = None
        self._session_factory = None
