"""
Database models for the run ledger
"""
import json
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, Index, Integer, String, Text
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class RunLog(Base):
    """One CLI invocation: what ran, with which seed, and what it produced"""
    __tablename__ = 'run_logs'

    id = Column(Integer, primary_key=True)
    started_at = Column(DateTime, default=datetime.utcnow, nullable=False)
    command = Column(String(32), nullable=False)  # gen, bench, bounds, ...
    seed = Column(String(20))  # unsigned 64-bit, kept as text
    threads = Column(Integer)
    dataset_checksum = Column(String(64))
    output_path = Column(String(1000))
    output_sha256 = Column(String(64))
    duration_seconds = Column(Float)
    status = Column(String(16), default='ok')  # ok, failed (e.g. bound violations), error
    error = Column(Text)
    summary = Column(Text)  # JSON dict, e.g. {"violations": 0, "trials": 1000}

    __table_args__ = (
        Index('idx_run_started', 'started_at'),
        Index('idx_run_command', 'command'),
    )

    def __repr__(self):
        return f"<RunLog(id={self.id}, command='{self.command}', status='{self.status}')>"

    def to_dict(self):
        """Convert to dictionary"""
        return {
            'id': self.id,
            'started_at': self.started_at.isoformat() if self.started_at else None,
            'command': self.command,
            'seed': self.seed,
            'threads': self.threads,
            'dataset_checksum': self.dataset_checksum,
            'output_path': self.output_path,
            'output_sha256': self.output_sha256,
            'duration_seconds': self.duration_seconds,
            'status': self.status,
            'error': self.error,
            'summary': json.loads(self.summary) if self.summary else {},
        }
