"""Order-deterministic worker pool for independent, seeded work items.

Work items are pure functions of (context, index).  Results come back in
index order whatever the worker count, so output bytes never depend on the
pool size.  The shared context is shipped to each worker once via the pool
initializer rather than per task.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

__all__ = ["run_indexed", "default_workers"]

_WORK = None


def _init_worker(fn_and_ctx):
    global _WORK
    _WORK = fn_and_ctx


def _invoke(index: int):
    fn, ctx = _WORK
    return fn(ctx, index)


def run_indexed(fn, n_items: int, ctx, workers: int = 1) -> list:
    """Evaluate ``fn(ctx, i)`` for ``i in range(n_items)``, in index order.

    ``fn`` must be a module-level callable (picklable by reference) when
    ``workers > 1``.
    """
    if n_items == 0:
        return []
    if workers <= 1 or n_items == 1:
        return [fn(ctx, i) for i in range(n_items)]
    chunk = max(1, n_items // (workers * 4))
    with ProcessPoolExecutor(
        max_workers=min(workers, n_items),
        initializer=_init_worker,
        initargs=((fn, ctx),),
    ) as pool:
        return list(pool.map(_invoke, range(n_items), chunksize=chunk))


def default_workers() -> int:
    """Worker count from the NETDYN_WORKERS environment variable (default 1)."""
    raw = os.environ.get("NETDYN_WORKERS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"NETDYN_WORKERS must be an integer, got {raw!r}") from exc
    return max(1, value)
