"""Replicate-parallel execution over fixed chunks.

Chunks are cut from the replicate count and the configured chunk size only,
and every chunk seeds its own stream from its key, so results do not depend
on the worker count.
"""

import concurrent.futures
import multiprocessing
import os
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

from ..utils.logger import get_logger

logger = get_logger(__name__)

T = TypeVar("T")


def default_start_method() -> str:
    methods = multiprocessing.get_all_start_methods()
    if os.name == "posix" and "fork" in methods:
        return "fork"
    if "spawn" in methods:
        return "spawn"
    return methods[0]


def chunk_plan(total: int, chunk_size: int) -> List[Tuple[int, int, int]]:
    """``(chunk_index, first_replicate, size)`` triples covering ``total``."""
    plan = []
    for index, start in enumerate(range(0, total, chunk_size)):
        plan.append((index, start, min(chunk_size, total - start)))
    return plan


def map_chunks(
    func: Callable[[Any], T],
    tasks: Sequence[Any],
    workers: int = 1,
    start_method: Optional[str] = None,
) -> List[T]:
    """Apply ``func`` to every task; results come back in task order.

    ``func`` must be a module-level function when ``workers > 1``.
    """
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]

    results: Dict[int, T] = {}
    futures = {}
    mp_context = multiprocessing.get_context(start_method or default_start_method())
    used = min(workers, len(tasks))
    logger.debug(f"running {len(tasks)} chunks on {used} workers")

    with concurrent.futures.ProcessPoolExecutor(
        max_workers=used, mp_context=mp_context
    ) as executor:
        for index, task in enumerate(tasks):
            future = executor.submit(func, task)
            futures[future] = index

        for future in concurrent.futures.as_completed(futures):
            results[futures[future]] = future.result()

    return [results[index] for index in sorted(results)]
