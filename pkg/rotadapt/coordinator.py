"""Bounded concurrent fan-out for rotadapt."""

from __future__ import annotations

import asyncio
import logging
import os
from typing import TYPE_CHECKING, TypeVar

from .exceptions import InvalidArgumentError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

_LOGGER = logging.getLogger(__name__)

T = TypeVar("T")


def available_workers() -> int:
    """Available parallelism of this process."""
    if hasattr(os, "sched_getaffinity"):
        return max(1, len(os.sched_getaffinity(0)))
    return max(1, os.cpu_count() or 1)


class WorkCoordinator:
    """
    Class to run independent CPU jobs with limited concurrency.

    Jobs run in worker threads; results come back in submission order, so any
    reduction over them is independent of the schedule.
    """

    def __init__(self, workers: int | None = None, name: str = "work") -> None:  # noqa: D107
        if workers is not None and workers < 1:
            msg = f"workers must be at least 1, got {workers}"
            raise InvalidArgumentError(msg)
        self.workers = workers or available_workers()
        self.name = name

    async def async_run(self, jobs: Sequence[Callable[[], T]], labels: Sequence[str] | None = None) -> list[T]:
        """Run all jobs, at most `workers` at a time."""
        _LOGGER.debug("Running %d %s jobs on %d workers", len(jobs), self.name, self.workers)
        sem = asyncio.Semaphore(self.workers)

        async def _run(job: Callable[[], T]) -> T:
            async with sem:
                return await asyncio.to_thread(job)

        results = await asyncio.gather(
            *(_run(job) for job in jobs),
            return_exceptions=True,
        )

        first_failure: BaseException | None = None
        for position, result in enumerate(results):
            if isinstance(result, BaseException):
                label = labels[position] if labels else str(position)
                _LOGGER.warning("%s job %s failed: %s", self.name, label, result)
                first_failure = first_failure or result
        if first_failure is not None:
            raise first_failure
        return list(results)  # type: ignore[arg-type]

    def run(self, jobs: Sequence[Callable[[], T]], labels: Sequence[str] | None = None) -> list[T]:
        """Blocking wrapper around `async_run`."""
        if self.workers == 1:
            return [job() for job in jobs]
        return asyncio.run(self.async_run(jobs, labels))
