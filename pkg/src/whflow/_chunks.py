"""Fixed-order chunked reduction over sample batches.

Estimators split their batch into fixed-size chunks, evaluate each chunk
independently, and sum the partial results in chunk order. The partition and
the reduction tree therefore never depend on the worker count, so results are
bit-identical whether chunks run sequentially or on a thread pool
(WHFLOW_WORKERS, default 1).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

CHUNK_ROWS = 8192


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("WHFLOW_WORKERS", "1")))
    except ValueError:
        return 1


def chunk_slices(n: int, chunk: int = CHUNK_ROWS) -> list[slice]:
    return [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def _map_chunks(fn, slices):
    workers = worker_count()
    if workers == 1 or len(slices) == 1:
        return [fn(sl) for sl in slices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, slices))


def chunked_sum(fn: Callable[[slice], np.ndarray], n: int,
                chunk: int = CHUNK_ROWS) -> np.ndarray:
    """Sum fn(sl) over the fixed chunk partition of range(n), in order."""
    parts = _map_chunks(fn, chunk_slices(n, chunk))
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total


def chunked_rows(fn: Callable[[slice], np.ndarray], n: int,
                 chunk: int = CHUNK_ROWS) -> np.ndarray:
    """Concatenate fn(sl) row blocks over the fixed chunk partition."""
    parts = _map_chunks(fn, chunk_slices(n, chunk))
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
