from .store import DatasetStore
from .formats import load, save, save_csv
from .synthetic import SyntheticKind, SyntheticSpec, generate, generate_labeled
from .database import init_db, get_session, record_run
from .models import Base, RunLog

__all__ = [
    'DatasetStore', 'load', 'save', 'save_csv',
    'SyntheticKind', 'SyntheticSpec', 'generate', 'generate_labeled',
    'init_db', 'get_session', 'record_run', 'Base', 'RunLog',
]
