"""Timing helpers for explorer stages."""

from contextlib import contextmanager
import functools
import logging
import time
from typing import Any, Callable, Generator, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


def log_timing(func: Callable[..., T]) -> Callable[..., T]:
    """Log at DEBUG how long a call took; failures are logged at ERROR and re-raised."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> T:
        start = time.perf_counter()
        try:
            result = func(*args, **kwargs)
        except Exception as e:
            logger.error(
                "%s failed after %.4f s: %s",
                func.__qualname__,
                time.perf_counter() - start,
                e,
            )
            raise
        logger.debug("%s took %.4f s", func.__qualname__, time.perf_counter() - start)
        return result

    return wrapper


@contextmanager
def log_block_timing(name: str) -> Generator[None, None, None]:
    """Time a block of code.

    Args:
        name: Name of the block for logging
    """
    start = time.perf_counter()
    logger.debug("Starting %s", name)
    try:
        yield
    finally:
        logger.debug("Finished %s in %.4f s", name, time.perf_counter() - start)


def format_seconds(seconds: float) -> str:
    """Render a duration with a unit that keeps three significant digits."""
    if seconds >= 1:
        return f"{seconds:.3f} s"
    if seconds >= 1e-3:
        return f"{seconds * 1e3:.3f} ms"
    return f"{seconds * 1e6:.3f} us"
