import time
import inspect
import logging
from functools import wraps

logger = logging.getLogger('hj_ks')


def timing_decorator(func):
    """Log the wall time of an engine entry point, sync or async"""
    if inspect.iscoroutinefunction(func):
        @wraps(func)
        async def async_wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                return await func(*args, **kwargs)
            finally:
                logger.debug(f"{func.__name__} took {time.perf_counter() - start_time:.4f} seconds")
        return async_wrapper

    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        try:
            return func(*args, **kwargs)
        finally:
            logger.debug(f"{func.__name__} took {time.perf_counter() - start_time:.4f} seconds")
    return wrapper
