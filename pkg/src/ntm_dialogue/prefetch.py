"""Bounded asynchronous batch queue."""

from __future__ import annotations

import asyncio
import logging
from collections.abc import AsyncIterator, Callable, Iterable, Sequence
from types import TracebackType
from typing import Generic, Optional, TypeVar, Union

_LOGGER = logging.getLogger(__name__)

RawT = TypeVar("RawT")
BatchT = TypeVar("BatchT")

_DONE = object()


async def cancel_task(*tasks: Optional[asyncio.Task]) -> None:
    """Cancel task(s)."""
    for task in tasks:
        if task is not None and not task.done():
            task.cancel()
            try:
                await task
            except asyncio.CancelledError:
                pass


class BatchPrefetcher(Generic[RawT, BatchT]):
    """Prepare batches in a worker thread while the consumer trains.

    Batches are prepared by a single producer task, so they come out in the
    order of `batches` no matter how long each one takes.
    """

    def __init__(
        self,
        batches: Iterable[Sequence[RawT]],
        prepare: Callable[[Sequence[RawT]], BatchT],
        maxsize: int = 2,
    ) -> None:
        """Initialize a prefetcher over raw batches."""
        self._batches = batches
        self._prepare = prepare
        self._queue: asyncio.Queue[Union[BatchT, BaseException, object]] = asyncio.Queue(
            maxsize
        )
        self._producer_task: Optional[asyncio.Task] = None

    @property
    def producer(self) -> Optional[asyncio.Task]:
        """Return the producer task."""
        return self._producer_task

    async def start(self) -> None:
        """Start the producer task."""
        if self._producer_task is None or self._producer_task.done():
            self._producer_task = asyncio.ensure_future(self._producer())

    async def close(self) -> None:
        """Stop the producer task."""
        await cancel_task(self._producer_task)

    async def __aenter__(self) -> BatchPrefetcher[RawT, BatchT]:
        await self.start()
        return self

    async def __aexit__(
        self,
        exc_type: Optional[type[BaseException]],
        exc_value: Optional[BaseException],
        traceback: Optional[TracebackType],
    ) -> None:
        await self.close()

    async def _producer(self) -> None:
        """Prepare each batch off the event loop and queue it."""
        count = 0
        try:
            for batch in self._batches:
                prepared = await asyncio.to_thread(self._prepare, batch)
                await self._queue.put(prepared)
                count += 1
        except Exception as ex:  # pylint: disable=broad-except
            await self._queue.put(ex)
        await self._queue.put(_DONE)
        _LOGGER.debug("Prefetcher prepared %d batches", count)

    def __aiter__(self) -> AsyncIterator[BatchT]:
        return self._iterate()

    async def _iterate(self) -> AsyncIterator[BatchT]:
        await self.start()
        while (item := await self._queue.get()) is not _DONE:
            if isinstance(item, BaseException):
                raise item
            yield item  # type: ignore[misc]
