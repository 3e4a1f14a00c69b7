"""Bounded worker pool; FORCEDECODE_THREADS caps the thread count."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    env = os.environ.get("FORCEDECODE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"FORCEDECODE_THREADS must be an integer, got {env!r}")
    return min(4, os.cpu_count() or 1)


def map_ordered(fn, items) -> list:
    """Map preserving input order; parallel only when it can help."""
    items = list(items)
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
