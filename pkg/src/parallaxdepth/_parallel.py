"""Row-chunk parallelism with deterministic, order-preserving reassembly."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "PARALLAXDEPTH_THREADS"


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_rows(fn, height: int, threads: int | None = None):
    """Call ``fn(row_slice)`` on contiguous row blocks and stack the results.

    ``fn`` returns an array or a tuple of arrays whose first axis spans the
    rows of the slice. Each row is computed independently of the chunking,
    so results do not depend on ``threads``.
    """
    threads = default_threads() if threads is None else max(1, int(threads))
    n = min(threads, height)
    bounds = np.linspace(0, height, n + 1).astype(int)
    slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if len(slices) == 1:
        parts = [fn(slices[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            parts = list(pool.map(fn, slices))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(cols, axis=0) for cols in zip(*parts))
    return np.concatenate(parts, axis=0)
