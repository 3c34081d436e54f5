"""Пул процессов для независимых задач по пользователям"""

import logging
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# shared read-only state of the current map (set per worker by the initializer)
_context: Dict[str, Any] = {}


def worker_context() -> Dict[str, Any]:
    return _context


def _init_worker(context: Dict[str, Any]) -> None:
    _context.clear()
    _context.update(context)


@contextmanager
def _local_context(context: Dict[str, Any]):
    saved = dict(_context)
    _init_worker(context)
    try:
        yield
    finally:
        _init_worker(saved)


def parallel_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    workers: int = 1,
    context: Optional[Dict[str, Any]] = None,
    chunksize: Optional[int] = None,
) -> List[R]:
    """
    Order-preserving map over items

    fn must be a module-level function; it reads shared inputs through
    worker_context(). Results come back in input order for any worker count.
    """
    items = list(items)
    context = context or {}
    if workers <= 1 or len(items) <= 1:
        with _local_context(context):
            return [fn(item) for item in items]

    chunksize = chunksize or max(1, len(items) // (workers * 4))
    logger.debug(f"Mapping {len(items)} tasks over {workers} processes (chunksize={chunksize})")
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(context,)) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
