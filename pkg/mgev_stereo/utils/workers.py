"""Worker-count policy and a small ordered prefetcher."""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def worker_count(deterministic: bool = False) -> int:
    """Threads allowed for background work; ``MGEV_THREADS`` caps the count."""
    if deterministic:
        return 1
    default = min(4, os.cpu_count() or 1)
    raw = os.environ.get('MGEV_THREADS')
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"MGEV_THREADS must be an integer, got '{raw}'") from None
    if value < 1:
        raise ValueError(f"MGEV_THREADS must be >= 1, got {value}")
    return value


def prefetch(fn: Callable[[T], R], items: Iterable[T], workers: int, depth: int = 2) -> Iterator[R]:
    """Yield ``fn(item)`` in order, computing up to ``depth`` results ahead on ``workers`` threads.

    With one worker everything runs inline on the calling thread.
    """
    if workers <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = []
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) > depth:
                yield pending.pop(0).result()
        for future in pending:
            yield future.result()
