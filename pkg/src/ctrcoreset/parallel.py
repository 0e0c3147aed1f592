"""Process-wide worker-pool cap.

``CTRCORESET_THREADS`` sets the initial value; the CLI ``--threads`` flag
overrides it. Work is split into a fixed set of chunks before dispatch, so
results never depend on the thread count.
"""
import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "CTRCORESET_THREADS"


def _env_threads():
    try:
        return max(1, int(os.environ.get(ENV_VAR, "1")))
    except ValueError:
        return 1


_threads = _env_threads()


def get_threads():
    return _threads


def set_threads(n):
    global _threads
    _threads = max(1, int(n))


def parallel_map(fn, items, threads=None):
    items = list(items)
    threads = get_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
