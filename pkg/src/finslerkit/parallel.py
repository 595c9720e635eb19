"""Deterministic chunked evaluation and fixed-order reductions.

Quadrature nodes are evaluated in fixed-size chunks (optionally across a
thread pool); results land in preallocated slots addressed by node index and
are reduced by a fixed-order pairwise sum, so the result is bit-identical
for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK_SIZE = 256

__all__ = ["CHUNK_SIZE", "pairwise_sum", "weighted_sum", "chunked_map"]


def pairwise_sum(values) -> float:
    """Fixed-order pairwise (binary tree) summation."""
    a = np.asarray(values, float).reshape(-1)

    def rec(lo, hi):
        if hi - lo <= 8:
            total = 0.0
            for i in range(lo, hi):
                total += float(a[i])
            return total
        mid = (lo + hi) // 2
        return rec(lo, mid) + rec(mid, hi)

    if a.size == 0:
        return 0.0
    return rec(0, a.size)


def weighted_sum(values, weights) -> float:
    return pairwise_sum(np.asarray(values, float) * np.asarray(weights, float))


def chunked_map(fn, n_items: int, threads: int = 1, chunk_size: int = CHUNK_SIZE):
    """Evaluate fn(lo, hi) -> ndarray over fixed chunks of range(n_items) and
    concatenate in index order.  The chunking is independent of the thread
    count."""
    bounds = [(lo, min(lo + chunk_size, n_items)) for lo in range(0, n_items, chunk_size)]
    results = [None] * len(bounds)
    if threads <= 1 or len(bounds) <= 1:
        for k, (lo, hi) in enumerate(bounds):
            results[k] = np.asarray(fn(lo, hi))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(fn, lo, hi): k for k, (lo, hi) in enumerate(bounds)}
            for fut, k in futures.items():
                results[k] = np.asarray(fut.result())
    if not results:
        return np.empty(0)
    return np.concatenate(results, axis=0)
