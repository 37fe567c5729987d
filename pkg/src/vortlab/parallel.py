"""Deterministic fan-out of independent work chunks over worker processes."""

from concurrent.futures import ProcessPoolExecutor


def chunked(items, size):
    items = list(items)
    return [items[i:i + size] for i in range(0, len(items), size)]


def map_chunks(fn, chunks, workers=1):
    """Apply ``fn`` to every chunk; results come back in chunk order.

    Chunk boundaries are fixed by the caller, never by ``workers``, so the
    output is independent of the worker count.
    """
    if workers <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
        return list(pool.map(fn, chunks))
