"""
Report I/O Module
Embedding files, metadata tables and evaluation report CSVs.

Embedding file: int64 LE count, int64 LE dim, then count x dim float64 LE values.
"""

import os
import struct
from typing import Tuple

import numpy as np

from adareg.evaluation.metrics import EvalReport
from adareg.utils.exceptions import StorageError
from adareg.utils.results_handler import read_csv, write_csv

_HEADER = struct.Struct('<qq')

META_HEADER = ('index', 'identity', 'camera')
REPORT_HEADER = ('metric', 'value')
PER_QUERY_HEADER = ('query_index', 'ap', 'first_match_rank')
CMC_HEADER = ('rank', 'accuracy')
RANKED_HEADER = ('query_index', 'rank', 'gallery_index', 'identity', 'camera', 'distance', 'match')


def write_embeddings(path: str, embeddings: np.ndarray) -> str:
    embeddings = np.ascontiguousarray(embeddings, dtype='<f8')
    if embeddings.ndim != 2:
        raise StorageError(f"embeddings must be a matrix, got shape {embeddings.shape}")
    try:
        with open(path, 'wb') as file:
            file.write(_HEADER.pack(*embeddings.shape))
            file.write(embeddings.tobytes())
    except OSError as e:
        raise StorageError(f"Failed to write {path}: {e}") from e
    return path


def read_embeddings(path: str) -> np.ndarray:
    try:
        with open(path, 'rb') as file:
            blob = file.read()
    except OSError as e:
        raise StorageError(f"Failed to read {path}: {e}") from e
    if len(blob) < _HEADER.size:
        raise StorageError(f"{path}: missing embedding header")
    count, dim = _HEADER.unpack(blob[:_HEADER.size])
    expected = _HEADER.size + count * dim * 8
    if count < 0 or dim < 0 or len(blob) != expected:
        raise StorageError(f"{path}: expected {expected} bytes for {count} x {dim} embeddings, found {len(blob)}")
    return np.frombuffer(blob, dtype='<f8', offset=_HEADER.size).astype(np.float64).reshape(count, dim)


def write_meta(path: str, identities: np.ndarray, cameras: np.ndarray) -> str:
    rows = ((i, int(pid), int(cam)) for i, (pid, cam) in enumerate(zip(identities, cameras)))
    return write_csv(path, META_HEADER, rows)


def read_meta(path: str) -> Tuple[np.ndarray, np.ndarray]:
    rows = read_csv(path, META_HEADER)
    try:
        return (np.array([int(r['identity']) for r in rows], dtype=np.int64),
                np.array([int(r['camera']) for r in rows], dtype=np.int64))
    except ValueError as e:
        raise StorageError(f"{path}: malformed metadata: {e}") from e


def write_report(directory: str, report: EvalReport, gallery_ids: np.ndarray, gallery_cams: np.ndarray,
                 query_ids: np.ndarray, top_k: int = 10) -> None:
    """Write report.csv, per_query.csv, cmc.csv and ranked_lists.csv into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    write_csv(os.path.join(directory, 'report.csv'), REPORT_HEADER, report.summary().items())
    write_csv(os.path.join(directory, 'per_query.csv'), PER_QUERY_HEADER,
              ((i, ap, rank) for i, (ap, rank) in enumerate(zip(report.aps, report.first_ranks))))
    write_csv(os.path.join(directory, 'cmc.csv'), CMC_HEADER,
              ((k, float(v)) for k, v in enumerate(report.cmc, start=1)))

    rows = []
    for q, order in enumerate(report.orders):
        for rank, g in enumerate(order[:top_k], start=1):
            match = int(gallery_ids[g] == query_ids[q])
            distance = float(report.distances[q, g]) if report.distances is not None else None
            rows.append((q, rank, int(g), int(gallery_ids[g]), int(gallery_cams[g]), distance, match))
    write_csv(os.path.join(directory, 'ranked_lists.csv'), RANKED_HEADER, rows)
