# process_painter/task_runner.py

from concurrent.futures import ProcessPoolExecutor, as_completed

from tqdm import tqdm  # type: ignore

from .logger import log


def _run_task(func, index):
    """Executes one task in a worker; module level so it pickles."""
    return func(index)


class TaskRunner:
    """
    The batch worker pool.

    Runs func(index) for a list of task indices, inline when max_workers is 1 and on a
    ProcessPoolExecutor otherwise, and always hands results back in index order. Every task derives
    its randomness from its own index, so the output does not depend on the worker count.
    """

    def __init__(self, max_workers=1, progress=True):
        self.max_workers = max(1, int(max_workers))
        self.progress = progress

    def _bar(self, iterable, total, desc):
        # None lets tqdm switch itself off when stderr is not a terminal.
        return tqdm(iterable, total=total, desc=desc, leave=False, disable=None if self.progress else True)

    def map(self, func, indices, desc=None):
        """
        Args:
            func: A picklable callable taking one task index.
            indices: Task indices.
            desc (str): Progress bar label.

        Returns:
            list: func(i) for each index, in the order given.
        """
        indices = list(indices)
        if not indices:
            return []
        log.info(f"TASK_RUNNER: Starting {len(indices)} task(s) on {self.max_workers} worker(s).")
        if self.max_workers == 1:
            results = [_run_task(func, i) for i in self._bar(indices, len(indices), desc)]
        else:
            results = [None] * len(indices)
            chunk = max(1, len(indices) // (4 * self.max_workers))
            with ProcessPoolExecutor(max_workers=self.max_workers) as executor:
                futures = {}
                for start in range(0, len(indices), chunk):
                    block = indices[start : start + chunk]
                    futures[executor.submit(_run_chunk, func, block)] = start
                for future in self._bar(as_completed(futures), len(futures), desc):
                    start = futures[future]
                    try:
                        block_results = future.result()
                    except Exception as e:
                        log.error(f"TASK_RUNNER: Chunk starting at task {indices[start]} failed: {e}", exc_info=True)
                        raise
                    results[start : start + len(block_results)] = block_results
        log.info(f"TASK_RUNNER: Finished {len(indices)} task(s).")
        return results


def _run_chunk(func, block):
    return [_run_task(func, i) for i in block]
