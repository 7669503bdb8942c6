import os
import threading
import time
from functools import wraps
from typing import Any, Callable, Dict, FrozenSet, Tuple

FIXTURE_CACHE_TTL_SECONDS = int(os.getenv("FIXTURE_CACHE_TTL_SECONDS", "300"))


def ttl_cache(seconds: int = FIXTURE_CACHE_TTL_SECONDS):
    """
    Time-to-live memoisation for loaders of small, rarely changing files.

    Results are keyed on the positional and keyword arguments, which must be
    hashable.  Exceptions are not cached.  The wrapper exposes
    ``cache_clear()`` so tests can force a reload.

    Parameters
    ----------
    seconds : int, optional
        How long a stored result stays valid.  Defaults to
        ``FIXTURE_CACHE_TTL_SECONDS`` (300).

    Returns
    -------
    Callable
        Decorator applying the cache.
    """
    def decorator(fn: Callable):
        cache: Dict[Tuple[Tuple[Any, ...], FrozenSet[Tuple[str, Any]]], Tuple[Any, float]] = {}
        lock = threading.Lock()

        @wraps(fn)
        def wrapper(*args, **kwargs):
            key = (args, frozenset(kwargs.items()))
            now = time.monotonic()
            with lock:
                hit = cache.get(key)
            if hit is not None and now - hit[1] < seconds:
                return hit[0]
            result = fn(*args, **kwargs)
            with lock:
                cache[key] = (result, now)
            return result

        def cache_clear():
            with lock:
                cache.clear()

        wrapper.cache_clear = cache_clear
        return wrapper
    return decorator
