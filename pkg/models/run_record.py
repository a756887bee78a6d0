"""SQLAlchemy model for the run history."""

from __future__ import annotations

import json

from sqlalchemy import Column, Float, Integer, String, Text

from core.database import Base


class RunRecord(Base):
    """One CLI invocation and the files it produced."""

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    command = Column(String(32), nullable=False, index=True)
    config_hash = Column(String(64), nullable=False, index=True)
    seeds = Column(Text, nullable=False)
    output_dir = Column(Text, nullable=False)
    outputs = Column(Text, nullable=False)
    status = Column(String(32), nullable=False, default="ok")
    started_at = Column(String(64), nullable=False)
    wall_clock_s = Column(Float, nullable=False, default=0.0)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seeds": json.loads(self.seeds or "[]"),
            "output_dir": self.output_dir,
            "outputs": json.loads(self.outputs or "[]"),
            "status": self.status,
            "started_at": self.started_at,
            "wall_clock_s": self.wall_clock_s,
        }

    @classmethod
    def from_mapping(cls, payload: dict) -> "RunRecord":
        return cls(
            command=payload.get("command", ""),
            config_hash=payload.get("config_hash", ""),
            seeds=json.dumps(list(payload.get("seeds", []))),
            output_dir=str(payload.get("output_dir", "")),
            outputs=json.dumps(list(payload.get("outputs", []))),
            status=payload.get("status", "ok"),
            started_at=payload.get("started_at", ""),
            wall_clock_s=float(payload.get("wall_clock_s", 0.0)),
        )
