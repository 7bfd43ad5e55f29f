import asyncio
import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from typing import Any, Callable, Iterable, List, Optional

from ..config.config import config

logger = logging.getLogger('hj_ks')


class WorkerPool:
    """A bounded pool that runs blocking engine calls off the event loop.

    Used for ensembles: many orbits traced against one shared, read-only
    evolution record, or independent classical runs with different seeds.
    """

    def __init__(self, max_workers: Optional[int] = None, timeout: Optional[float] = None):
        self.max_workers = int(max_workers or config["runner"]["max_workers"])
        self.timeout = timeout
        self.active_tasks = 0
        self.completed_tasks = 0
        self._executor = ThreadPoolExecutor(max_workers=self.max_workers, thread_name_prefix="hj_ks")
        self._semaphore: Optional[asyncio.Semaphore] = None
        self._semaphore_loop: Optional[asyncio.AbstractEventLoop] = None
        self._closed = False

    @asynccontextmanager
    async def slot(self):
        """Hold one of the ``max_workers`` slots."""
        if self._closed:
            raise RuntimeError("worker pool is closed")
        # a semaphore binds to the loop it first waits on
        loop = asyncio.get_running_loop()
        if self._semaphore is None or self._semaphore_loop is not loop:
            self._semaphore = asyncio.Semaphore(self.max_workers)
            self._semaphore_loop = loop
        async with self._semaphore:
            self.active_tasks += 1
            logger.debug(f"Worker slot taken, active: {self.active_tasks}")
            try:
                yield
            finally:
                self.active_tasks -= 1
                self.completed_tasks += 1

    async def submit(self, fn: Callable[..., Any], *args, **kwargs) -> Any:
        async with self.slot():
            loop = asyncio.get_running_loop()
            future = loop.run_in_executor(self._executor, functools.partial(fn, *args, **kwargs))
            try:
                if self.timeout:
                    return await asyncio.wait_for(future, self.timeout)
                return await future
            except asyncio.TimeoutError:
                logger.error(f"{getattr(fn, '__name__', fn)} timed out after {self.timeout}s")
                raise
            except Exception as e:
                logger.error(f"Worker task {getattr(fn, '__name__', fn)} failed: {str(e)}")
                raise

    async def map(self, fn: Callable[[Any], Any], items: Iterable[Any],
                  return_exceptions: bool = False) -> List[Any]:
        """Results in submission order."""
        return await asyncio.gather(*(self.submit(fn, item) for item in items),
                                    return_exceptions=return_exceptions)

    async def close_all(self):
        """Wait for running work and release the threads."""
        if self._closed:
            return
        self._closed = True
        self._executor.shutdown(wait=True)
        logger.debug(f"Worker pool closed after {self.completed_tasks} tasks")

    async def __aenter__(self) -> "WorkerPool":
        return self

    async def __aexit__(self, *exc) -> None:
        await self.close_all()
