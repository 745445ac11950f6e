"""Thread-pool helper honouring ``QUADCORR_THREADS``."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def max_threads() -> int:
    raw = os.environ.get("QUADCORR_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"QUADCORR_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def thread_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> Iterator[R]:
    """Ordered map; runs inline when one thread is allowed.

    At most ``2 * threads`` items are in flight so large chunk iterators
    are not materialized.
    """
    n = min(threads or max_threads(), max_threads())
    if n <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(n) as pool:
        pending = []
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= 2 * n:
                yield pending.pop(0).result()
        for fut in pending:
            yield fut.result()
