"""
On-disk dataset formats

Binary (authoritative):
    magic "NNSE" | u32 version = 1 | u64 N | u64 d | N*d little-endian float32, row-major

CSV: headerless, one row per point, comma-separated decimal floats.
"""
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from config import DATASET_MAGIC, DATASET_VERSION
from errors import DataError, DatasetFormatError
from .store import DatasetStore

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4sIQQ")

PathLike = Union[str, Path]


def save(store: DatasetStore, path: PathLike) -> Path:
    """
    Write a dataset in the binary format.

    Args:
        store: Dataset to write
        path: Destination file

    Returns:
        The written path
    """
    path = Path(path)
    payload = np.ascontiguousarray(store.points, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(DATASET_MAGIC, DATASET_VERSION, store.n, store.dim))
        fh.write(payload.tobytes())
    logger.info(f"Wrote {store.n}x{store.dim} dataset to {path}")
    return path


def save_csv(store: DatasetStore, path: PathLike) -> Path:
    """Write a dataset as headerless CSV (full 64-bit precision)"""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in store.points:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


def parse_binary(raw: bytes) -> DatasetStore:
    """Decode the binary format from memory"""
    if len(raw) < HEADER.size:
        raise DatasetFormatError(f"truncated header: {len(raw)} of {HEADER.size} bytes", offset=len(raw))
    magic, version, n, d = HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}", offset=0)
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported version {version}", offset=4)
    if n < 1 or d < 1:
        raise DatasetFormatError(f"empty dataset shape N={n}, d={d}", offset=8)
    expected = HEADER.size + 4 * n * d
    if len(raw) < expected:
        raise DatasetFormatError(f"truncated payload: expected {expected} bytes, got {len(raw)}", offset=len(raw))
    if len(raw) > expected:
        raise DatasetFormatError(f"{len(raw) - expected} trailing bytes after payload", offset=expected)
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=HEADER.size).reshape(n, d)
    if not np.all(np.isfinite(values)):
        flat = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise DataError(f"non-finite value at row {flat // d}, column {flat % d}")
    return DatasetStore.from_array(values.astype(np.float64))


def parse_csv(text: str) -> DatasetStore:
    """Decode headerless CSV"""
    rows = []
    width = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise DatasetFormatError(f"line {line_no}: not a comma-separated row of numbers")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetFormatError(f"line {line_no}: expected {width} columns, got {len(row)}")
        rows.append(row)
    if not rows:
        raise DatasetFormatError("CSV dataset has no rows", offset=0)
    matrix = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(matrix)):
        raise DataError("CSV dataset contains NaN or Inf entries")
    return DatasetStore.from_array(matrix)


def load(path: PathLike) -> DatasetStore:
    """
    Read a dataset file, detecting the format from its magic bytes.

    Files that start with "NNSE" are decoded as binary; anything else with
    a .csv/.txt suffix is decoded as CSV.

    Args:
        path: Dataset file

    Returns:
        DatasetStore with recomputed squared norms
    """
    path = Path(path)
    raw = path.read_bytes()
    if not raw:
        raise DatasetFormatError(f"{path}: empty file", offset=0)
    if raw[:4] == DATASET_MAGIC or path.suffix.lower() not in (".csv", ".txt"):
        store = parse_binary(raw)
    else:
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DatasetFormatError(f"{path}: not UTF-8 text", offset=e.start)
        store = parse_csv(text)
    logger.info(f"Loaded {store.n}x{store.dim} dataset from {path}")
    return store
