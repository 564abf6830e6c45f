import os
from concurrent.futures import ThreadPoolExecutor


def default_threads():
    return os.cpu_count() or 1


def ordered_map(func, items, threads=1):
    """``[func(x) for x in items]``, optionally on a thread pool; order is kept."""
    items = list(items)
    if threads is None:
        threads = default_threads()
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
