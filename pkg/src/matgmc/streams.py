"""Deterministic random streams and the replica orchestration layer.

Every Monte Carlo quantity in the package is a pure function of a master
seed. Replica ``r`` of an experiment draws from a counter-based Philox
generator keyed by ``(seed, purpose, r)``, so results do not depend on how
replicas are scheduled over workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

# Purpose tags keep independent experiment components on disjoint streams.
FIELD = 1
RENORM = 2
ANGULAR = 3
ORACLE = 4

#: Replicas processed together; also the jackknife block size.
CHUNK = 32


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Generator for stream ``index`` of a given purpose under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def replica_streams(seed: int, purpose: int, start: int, stop: int) -> list[np.random.Generator]:
    return [stream(seed, purpose, r) for r in range(start, stop)]


def chunks(n: int, size: int = CHUNK) -> list[tuple[int, int]]:
    """Fixed partition of ``range(n)``; independent of the worker count."""
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("MGMC_WORKERS", "1"))
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    return workers


def ordered_map(fn: Callable[[T], object], tasks: Sequence[T], workers: int | None = 1) -> list:
    """Apply ``fn`` to every task and return results in task order.

    This is the only place threads are created. numpy releases the GIL in
    FFTs and LAPACK calls, which is where the replica work is spent.
    """
    workers = resolve_workers(workers)
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def run_replicas(
    fn: Callable[[int, int], np.ndarray],
    n_replicas: int,
    workers: int | None = 1,
    chunk: int = CHUNK,
) -> np.ndarray:
    """Evaluate ``fn(start, stop)`` over fixed replica chunks and concatenate.

    ``fn`` must return an array whose leading axis indexes the replicas
    ``start..stop-1``.
    """
    parts = ordered_map(lambda ab: fn(*ab), chunks(n_replicas, chunk), workers)
    return np.concatenate(parts, axis=0)


def jackknife_mean_se(samples: np.ndarray, block: int = CHUNK) -> tuple[np.ndarray, np.ndarray]:
    """Mean over axis 0 and its delete-one-block jackknife standard error."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    n_blocks = n // block
    mean = samples.mean(axis=0)
    if n_blocks < 2:
        se = samples.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
        return mean, se
    used = samples[: n_blocks * block]
    sums = used.reshape((n_blocks, block) + samples.shape[1:]).sum(axis=1)
    total = sums.sum(axis=0)
    loo = (total - sums) / (used.shape[0] - block)
    se = np.sqrt((n_blocks - 1) / n_blocks * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return mean, se
