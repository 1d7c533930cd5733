"""Deterministic block-parallel execution over paths.

Paths are split into fixed-size blocks whose composition depends only on the
path count, never on the worker count.  Blocks may run in any order on any
worker; results come back in block order and callers reduce them in that
order, so output is bit-identical for every worker count.
"""

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor

from .errors import ConfigurationError

PATH_BLOCK = 2048
WORKERS_ENV = "ERGODIC_BEM_WORKERS"

_TASK = None


def path_blocks(n_paths, size=PATH_BLOCK):
    if n_paths < 1:
        raise ConfigurationError(f"need at least one path, got {n_paths}")
    return [range(s, min(s + size, n_paths)) for s in range(0, n_paths, size)]


def resolve_workers(workers=None):
    """Worker count from the argument, then ``$ERGODIC_BEM_WORKERS``, default 1."""
    if workers is None:
        workers = os.environ.get(WORKERS_ENV, "1")
    if isinstance(workers, str):
        if workers.strip().lower() == "auto":
            return os.cpu_count() or 1
        try:
            workers = int(workers)
        except ValueError:
            raise ConfigurationError(f"workers must be an integer or 'auto', got {workers!r}") from None
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")
    return workers


def _run_forked(block):
    fn, args = _TASK
    return fn(*args, block)


def map_blocks(fn, blocks, args=(), workers=None):
    """``[fn(*args, block) for block in blocks]``, possibly in worker processes.

    Workers are forked so models built from closures need not be picklable;
    only blocks and results cross process boundaries.
    """
    global _TASK
    n = resolve_workers(workers)
    blocks = list(blocks)
    if n == 1 or len(blocks) == 1 or "fork" not in mp.get_all_start_methods():
        return [fn(*args, b) for b in blocks]
    _TASK = (fn, args)
    try:
        with ProcessPoolExecutor(max_workers=min(n, len(blocks)),
                                 mp_context=mp.get_context("fork")) as pool:
            return list(pool.map(_run_forked, blocks))
    finally:
        _TASK = None
