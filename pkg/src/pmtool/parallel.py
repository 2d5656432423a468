"""Seeded-chunk parallel reduction.

Work of ``total`` samples is cut into chunks of a fixed ``chunk_size``.  Chunk
``c`` of stream ``s`` draws from ``SeedSequence(seed, spawn_key=(s, c))``, and
partial results are merged in chunk order.  The decomposition depends only on
``(total, chunk_size)``, so results are bit-identical for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

DEFAULT_CHUNK = 1 << 15
N_BATCHES = 64


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``PMTOOL_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("PMTOOL_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def chunk_rng(seed: int, stream: int, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(chunk)))
    return np.random.Generator(np.random.PCG64(ss))


def chunk_seed_entropy(seed: int, stream: int, chunk: int) -> int:
    """First 64 bits of the chunk's seed state, recorded in run manifests."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(chunk)))
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0])


def chunk_bounds(total: int, chunk_size: int = DEFAULT_CHUNK):
    return [(c, s, min(s + chunk_size, total)) for c, s in enumerate(range(0, total, chunk_size))]


def chunked_map(fn: Callable, total: int, chunk_size: int = DEFAULT_CHUNK, threads: int | None = None):
    """Call ``fn(chunk, start, stop)`` for every chunk; results in chunk order."""
    bounds = chunk_bounds(total, chunk_size)
    n = resolve_threads(threads)
    if n == 1 or len(bounds) <= 1:
        return [fn(*b) for b in bounds]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


class BatchAccumulator:
    """Running sums of per-sample vectors grouped into batches by global index.

    Sample ``i`` of ``total`` lands in batch ``i * n_batches // total``.  The
    standard error is the batch-means estimate.
    """

    def __init__(self, total: int, width: int = 1, n_batches: int = N_BATCHES):
        self.total = int(total)
        self.width = int(width)
        self.n_batches = max(1, min(int(n_batches), self.total))
        self.sums = np.zeros((self.n_batches, self.width))
        self.counts = np.zeros(self.n_batches)

    def add(self, start: int, values) -> None:
        v = np.asarray(values, dtype=float).reshape(len(values), -1)
        idx = np.arange(start, start + len(v))
        batch = idx * self.n_batches // self.total
        self.counts += np.bincount(batch, minlength=self.n_batches)
        for j in range(self.width):
            self.sums[:, j] += np.bincount(batch, weights=v[:, j], minlength=self.n_batches)

    def merge(self, other: "BatchAccumulator") -> "BatchAccumulator":
        self.sums += other.sums
        self.counts += other.counts
        return self

    def empty_like(self) -> "BatchAccumulator":
        return BatchAccumulator(self.total, self.width, self.n_batches)

    @property
    def samples(self) -> int:
        return int(self.counts.sum())

    @property
    def mean(self) -> np.ndarray:
        return self.sums.sum(axis=0) / self.counts.sum()

    def batch_means(self) -> np.ndarray:
        used = self.counts > 0
        return self.sums[used] / self.counts[used, None]

    @property
    def std_error(self) -> np.ndarray:
        bm = self.batch_means()
        if len(bm) < 2:
            return np.full(self.width, np.nan)
        return bm.std(axis=0, ddof=1) / np.sqrt(len(bm))


def reduce_batches(fn: Callable, total: int, width: int, chunk_size: int = DEFAULT_CHUNK,
                   threads: int | None = None, n_batches: int = N_BATCHES) -> BatchAccumulator:
    """Run ``fn(chunk, start, stop) -> (stop - start, width) array`` and batch the rows."""
    def work(c, s, e):
        acc = BatchAccumulator(total, width, n_batches)
        acc.add(s, fn(c, s, e))
        return acc

    parts = chunked_map(work, total, chunk_size, threads)
    out = BatchAccumulator(total, width, n_batches)
    for p in parts:
        out.merge(p)
    return out
