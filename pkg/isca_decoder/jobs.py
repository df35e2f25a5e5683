"""
Per-utterance fan-out over a thread pool.

Workers never raise into the pool: each returns (key, result, error_or_None),
and failures are collected so a run can finish the remaining utterances
before reporting.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Hashable, Iterable, Optional, TypeVar

from .config import log
from .errors import InvariantViolation, IscaError

K = TypeVar("K", bound=Hashable)
T = TypeVar("T")
R = TypeVar("R")


def _run_one(func: Callable[[T], R], key: K, item: T) -> tuple[K, Optional[R], Optional[Exception]]:
    try:
        return key, func(item), None
    except InvariantViolation:
        raise
    except (IscaError, OSError, ValueError) as exc:
        return key, None, exc


def map_utterances(func: Callable[[T], R], items: Iterable[tuple[K, T]], jobs: int = 1,
                   errors: Optional[dict[K, Exception]] = None) -> dict[K, R]:
    """Apply *func* to each item; return {key: result} in input order.

    Input errors are logged and stored in *errors* (when given) instead of
    aborting the batch; InvariantViolation and unexpected exceptions propagate.
    """
    items = list(items)
    results: dict[K, R] = {}
    failures: dict[K, Exception] = {} if errors is None else errors

    if jobs <= 1 or len(items) <= 1:
        outcomes = [_run_one(func, key, item) for key, item in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_one, func, key, item): key for key, item in items}
            done = {}
            for future in as_completed(futures):
                key, value, err = future.result()
                done[key] = (key, value, err)
        outcomes = [done[key] for key, _ in items]

    for key, value, err in outcomes:
        if err is not None:
            failures[key] = err
            log.error("%s: %s", key, err)
        else:
            results[key] = value
    return results


def map_ordered(func: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    """Apply *func* to every item concurrently; results keep input order, errors propagate."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))
