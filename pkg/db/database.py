"""
Run ledger connection and session management
"""
import json
from pathlib import Path
from typing import Optional, Union

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from .models import Base, RunLog

_sessions = {}


def init_db(path: Union[str, Path]):
    """Create the ledger tables in the SQLite file at `path` and return a session factory"""
    url = f"sqlite:///{Path(path)}"
    factory = _sessions.get(url)
    if factory is None:
        engine = create_engine(url, echo=False)
        Base.metadata.create_all(engine)
        factory = sessionmaker(bind=engine)
        _sessions[url] = factory
    return factory


def get_session(path: Union[str, Path]):
    """Get a new ledger session"""
    return init_db(path)()


def record_run(path: Union[str, Path], command: str, summary: Optional[dict] = None, **fields) -> int:
    """
    Append one RunLog row.

    Args:
        path: SQLite file of the ledger
        command: Subcommand name
        summary: JSON-serialisable run summary
        **fields: Remaining RunLog columns

    Returns:
        Id of the inserted row
    """
    session = get_session(path)
    try:
        entry = RunLog(command=command, summary=json.dumps(summary or {}, sort_keys=True), **fields)
        session.add(entry)
        session.commit()
        return entry.id
    finally:
        session.close()
