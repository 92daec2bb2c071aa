"""Ordered replica map over a process pool."""

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

from tqdm import tqdm

from config import settings
from utils import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(cli_workers: Optional[int] = None, config_workers: Optional[int] = None) -> int:
    """--workers, then the config file, then RWRE_WORKERS, then 1."""
    for value in (cli_workers, config_workers, settings.workers):
        if value:
            return max(1, int(value))
    return 1


def map_replicas(
    func: Callable[[T], R],
    tasks: Sequence[T],
    workers: int = 1,
    desc: str = "replicas",
    progress: Optional[bool] = None,
) -> List[R]:
    """Apply ``func`` to every task and return the results in task order.

    ``func`` must be a module-level function and every task must carry its own
    seeds, so the result does not depend on ``workers``.

    Args:
        func: picklable task function
        tasks: one argument tuple per replica
        workers: processes; 1 runs in this process
        desc: progress bar label
        progress: show a tqdm bar; defaults to ``settings.progress``

    Returns:
        ``func(task)`` for every task, in task order
    """
    show = settings.progress if progress is None else progress
    n = len(tasks)
    logger.debug(f"Mapping {n} {desc} over {workers} worker(s)")
    if workers <= 1 or n <= 1:
        iterator = tqdm(tasks, desc=desc, disable=not show)
        return [func(t) for t in iterator]

    chunksize = max(1, n // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as executor:
        results = executor.map(func, tasks, chunksize=chunksize)
        return list(tqdm(results, total=n, desc=desc, disable=not show))
