from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def default_workers() -> int:
    return os.cpu_count() or 1


def seed_stream(seed: int, k: int) -> np.random.Generator:
    """Independent generator for work item k.

    Streams are keyed by (seed, k) only, so results do not depend on how
    items are scheduled across workers.
    """

    return np.random.default_rng([int(seed), int(k)])


def map_work_items(
    fn: Callable[[T], R],
    items: Iterable[T],
    workers: Optional[int] = None,
) -> List[R]:
    """Apply fn to every item, in item order."""

    work: Sequence[T] = list(items)
    n_workers = default_workers() if workers is None else max(1, int(workers))
    if n_workers == 1 or len(work) <= 1:
        return [fn(item) for item in work]
    logger.debug("dispatching %d work items to %d workers", len(work), n_workers)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, work))


def chunk_sizes(total: int, chunk: int) -> List[int]:
    """Fixed-size chunks; the last one takes the remainder."""
    if total <= 0:
        return []
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes
