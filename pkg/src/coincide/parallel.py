"""Deterministic helpers for the data-parallel sections.

Work is split into tasks whose results are merged in task order, so the
output never depends on how many workers ran them. Numeric reductions
happen inside each task on fixed slices; the merge step only gathers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

from .errors import ConfigError

THREADS_ENV_VAR = "COINCIDE_THREADS"

_T = TypeVar("_T")
_R = TypeVar("_R")


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit argument, then COINCIDE_THREADS, then CPUs."""
    if threads is not None:
        if threads < 1:
            raise ConfigError(f"threads must be >= 1, got {threads}")
        return int(threads)
    env = os.environ.get(THREADS_ENV_VAR)
    if env is not None and env.strip():
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(
                f"{THREADS_ENV_VAR}={env!r} is not an integer",
                hint=f"set {THREADS_ENV_VAR} to a positive integer or unset it",
            ) from None
        if value < 1:
            raise ConfigError(f"{THREADS_ENV_VAR} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def thread_map(fn: Callable[[_T], _R], items: Iterable[_T], threads: int) -> list[_R]:
    """Apply ``fn`` to every item, results in item order.

    With one worker (or one item) this is a plain loop, so single-threaded
    runs never touch the executor.
    """
    work: Sequence[_T] = list(items)
    if threads <= 1 or len(work) <= 1:
        return [fn(item) for item in work]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, work))
