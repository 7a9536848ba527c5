"""Deterministic work-queue execution for sweep and bootstrap jobs.

Jobs are pure functions of immutable inputs with per-job RNG streams, so
results must not depend on scheduling.  Two details make runs bit-identical
across parallelism degrees: results are collected in submission order, and
BLAS thread pools are pinned to one thread while jobs execute (both in worker
processes and on the serial path), keeping floating-point reductions
identical.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from typing import Callable, Sequence

from threadpoolctl import threadpool_limits

_WORKER_STATE: dict = {}
_BLAS_PIN = None


def resolve_threads(requested: int | None) -> int:
    """CLI flag wins, then PENNMA_THREADS, then the machine's core count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("PENNMA_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _worker_init(initializer: Callable | None, initargs: tuple) -> None:
    global _BLAS_PIN
    _BLAS_PIN = threadpool_limits(limits=1)
    if initializer is not None:
        initializer(*initargs)


def run_jobs(
    worker: Callable,
    jobs: Sequence,
    threads: int,
    initializer: Callable | None = None,
    initargs: tuple = (),
) -> list:
    """Run worker(job) for each job, returning results in job order.

    worker and initializer must be module-level (picklable); shared immutable
    inputs go through the initializer so they are shipped to each worker once
    rather than per job.
    """
    if threads <= 1 or len(jobs) <= 1:
        with threadpool_limits(limits=1):
            if initializer is not None:
                initializer(*initargs)
            return [worker(job) for job in jobs]
    context = get_context("spawn")
    with ProcessPoolExecutor(
        max_workers=min(threads, len(jobs)),
        mp_context=context,
        initializer=_worker_init,
        initargs=(initializer, initargs),
    ) as pool:
        return list(pool.map(worker, jobs, chunksize=1))
