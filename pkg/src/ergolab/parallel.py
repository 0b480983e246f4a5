"""Deterministic chunked thread pool.

Work is split into fixed-size chunks of trajectory indices. The chunk size
never depends on the thread count, and results are gathered in chunk order,
so every reduction sees the same floating-point operations in the same order.
"""

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 4096


def thread_count(threads=None) -> int:
    if threads is None:
        threads = int(os.environ.get("ERGOLAB_THREADS", "1") or 1)
    return max(1, int(threads))


def map_chunks(fn, total, threads=None, chunk=CHUNK):
    """Return ``[fn(start, stop) for each chunk]`` in chunk order."""
    bounds = [(s, min(s + chunk, total)) for s in range(0, total, chunk)]
    threads = thread_count(threads)
    if threads == 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))
