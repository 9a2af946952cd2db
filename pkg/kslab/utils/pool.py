"""
KS Lab - Replica Pool
Runs independent replica tasks in worker processes, results in submission order
"""

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from ..core import KSLabError
from ..ui.logger import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def default_workers() -> int:
    return os.cpu_count() or 1


class ReplicaPool:
    """Process pool for replica tasks; workers=1 runs in-process"""

    def __init__(self, workers: Optional[int] = None):
        self.workers = int(workers) if workers else default_workers()
        if self.workers < 1:
            raise PoolError(f"workers must be >= 1, got {workers}")

    def map(
        self,
        fn: Callable[[T], R],
        tasks: Iterable[T],
        on_result: Optional[Callable[[int, R], None]] = None,
    ) -> List[R]:
        """
        Apply fn to every task

        Args:
            fn: Picklable (module-level) callable
            tasks: Task arguments
            on_result: Called as on_result(index, result) in submission order

        Returns:
            List[R]: Results in submission order, whatever order workers finish in
        """
        tasks = list(tasks)
        workers = min(self.workers, len(tasks)) if tasks else 1
        results: List[R] = []

        if workers == 1:
            for i, task in enumerate(tasks):
                result = fn(task)
                results.append(result)
                if on_result:
                    on_result(i, result)
            return results

        logger.debug("pool.starting", workers=workers, tasks=len(tasks))
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(fn, task) for task in tasks]
            try:
                for i, future in enumerate(futures):
                    result = future.result()
                    results.append(result)
                    if on_result:
                        on_result(i, result)
            except BaseException:
                for future in futures:
                    future.cancel()
                raise
        return results


class PoolError(KSLabError):
    """Invalid pool configuration"""
    pass
