"""Static object-range partitioning over a thread pool.

Kernels release the GIL and write only to slots owned by their range, so the
result does not depend on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_pools: dict[int, ThreadPoolExecutor] = {}


def default_workers():
    return os.cpu_count() or 1


def chunk_bounds(n, parts):
    parts = max(1, min(parts, n)) if n > 0 else 1
    step, extra = divmod(n, parts)
    bounds = []
    lo = 0
    for p in range(parts):
        hi = lo + step + (1 if p < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def run_chunks(n, workers, fn):
    """Call ``fn(lo, hi)`` over a partition of ``range(n)``; returns results in range order."""
    if workers <= 1 or n < 2:
        return [fn(0, n)]
    bounds = chunk_bounds(n, workers)
    pool = _pools.get(workers)
    if pool is None:
        pool = _pools[workers] = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="esicp")
    futures = [pool.submit(fn, lo, hi) for lo, hi in bounds]
    return [f.result() for f in futures]
