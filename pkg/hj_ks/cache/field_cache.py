import threading
import logging
from collections import OrderedDict
from typing import Any, Callable, Hashable, Optional

logger = logging.getLogger('hj_ks')


class FieldCache:
    """A small LRU cache for the band spectra of one evolution record.

    Keys are (period, substep, steps) with the fraction in lowest terms. Orbit tracers
    running in worker threads share it, so every access takes the lock.
    """

    def __init__(self, max_size=256):
        self.max_size = max_size
        self.cache: "OrderedDict[Hashable, Any]" = OrderedDict()
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def get(self, key: Hashable) -> Optional[Any]:
        """Get an entry and mark it as recently used."""
        with self._lock:
            if key in self.cache:
                self.cache.move_to_end(key)
                self.hits += 1
                return self.cache[key]
            self.misses += 1
            return None

    def set(self, key: Hashable, value: Any) -> None:
        """Store an entry, evicting the least recently used one when full."""
        with self._lock:
            if key in self.cache:
                self.cache.move_to_end(key)
            elif len(self.cache) >= self.max_size:
                self.cache.popitem(last=False)
            self.cache[key] = value

    def get_or_compute(self, key: Hashable, compute: Callable[[], Any]) -> Any:
        value = self.get(key)
        if value is None:
            value = compute()
            self.set(key, value)
        return value

    def invalidate(self, key: Optional[Hashable] = None) -> None:
        """Invalidate one entry or the entire cache."""
        with self._lock:
            if key is not None:
                self.cache.pop(key, None)
            else:
                self.cache.clear()
                logger.debug("Field cache cleared")

    def __len__(self) -> int:
        return len(self.cache)
