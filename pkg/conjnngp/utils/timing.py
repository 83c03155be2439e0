"""Wall-clock phases and memory readings for run reports."""

from __future__ import annotations

import logging
import threading
import time
from contextlib import contextmanager
from typing import Iterator

import psutil

logger = logging.getLogger(__name__)


@contextmanager
def timed(phase: str, timings: dict[str, float]) -> Iterator[None]:
    """Record seconds spent in the block under timings[phase] and log it."""
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        timings[phase] = timings.get(phase, 0.0) + elapsed
        logger.info("phase=%s seconds=%.3f", phase, elapsed)


def rss_mb() -> float:
    return psutil.Process().memory_info().rss / 2**20


class PeakMemory:
    """Context manager that polls this process's RSS on a daemon thread.

    `peak_mb` is the largest reading between enter and exit, `growth_mb` the
    peak above the reading taken on entry. Allocations shorter than the
    polling interval can be missed.
    """

    def __init__(self, interval: float = 0.05):
        self.interval = interval
        self._proc = psutil.Process()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.baseline_mb = 0.0
        self.peak_mb = 0.0

    def _sample(self) -> None:
        self.peak_mb = max(self.peak_mb, self._proc.memory_info().rss / 2**20)

    def _poll(self) -> None:
        while not self._stop.wait(self.interval):
            self._sample()

    def __enter__(self) -> "PeakMemory":
        self.baseline_mb = self.peak_mb = self._proc.memory_info().rss / 2**20
        self._stop.clear()
        self._thread = threading.Thread(target=self._poll, name="peak-memory", daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self._sample()
        logger.info("memory baseline_mb=%.1f peak_mb=%.1f", self.baseline_mb, self.peak_mb)

    @property
    def growth_mb(self) -> float:
        return self.peak_mb - self.baseline_mb


def default_workers() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
