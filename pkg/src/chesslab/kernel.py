"""Deterministic virtual-time event loop and named random streams.

Everything in the harness runs inside events dispatched by :class:`Simulation`.
Virtual time is an integer number of milliseconds since the start of the run.
"""

from __future__ import annotations

import hashlib
import heapq
import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from chesslab.errors import SchedulingInPast

Handler = Callable[[Any], None]


def derive_seed(root_seed: int, name: str) -> int:
    """64-bit stream seed from the root seed and the stream label."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class RngStream(random.Random):
    """A named, independently seeded ``random.Random``."""

    def __new__(cls, root_seed: int, name: str):
        return super().__new__(cls, derive_seed(root_seed, name))

    def __init__(self, root_seed: int, name: str):
        self.name = name
        self.stream_seed = derive_seed(root_seed, name)
        super().__init__(self.stream_seed)


@dataclass(order=True)
class ScheduledEvent:
    fire_at: int
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False, repr=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


class Simulation:
    """Single-threaded discrete-event scheduler.

    Events fire in strict ``(fire_at, seq)`` order. A payload that is callable
    is invoked with no arguments; otherwise it is passed to the handler
    registered for the event's target.

    ``realtime`` is the number of wall seconds per virtual second; when set,
    dispatch is paced with ``sleep`` but the order of events is unchanged.
    """

    def __init__(
        self,
        seed: int = 0,
        *,
        realtime: float | None = None,
        record_trace: bool = True,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.seed = int(seed)
        self.now = 0
        self.realtime = realtime
        self._sleep = sleep
        self._queue: list[ScheduledEvent] = []
        self._seq = 0
        self._streams: dict[str, RngStream] = {}
        self._handlers: dict[str, Handler] = {}
        self.record_trace = record_trace
        self.trace: list[tuple[int, int, str]] = []
        self.dispatched = 0

    # -- scheduling -------------------------------------------------------

    def schedule(self, fire_at: int, target: str, payload: Any = None) -> ScheduledEvent:
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SchedulingInPast(f"fire_at={fire_at} is before now={self.now}")
        event = ScheduledEvent(fire_at, self._seq, target, payload)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def after(self, delay: int, target: str, payload: Any = None) -> ScheduledEvent:
        return self.schedule(self.now + int(delay), target, payload)

    def every(
        self,
        interval: int,
        target: str,
        fn: Callable[[], Any],
        *,
        start: int | None = None,
    ) -> "PeriodicTask":
        """Call ``fn`` every ``interval`` ms, first at ``start`` (default now + interval).

        ``fn`` may return ``False`` to stop the task.
        """
        task = PeriodicTask(self, interval, target, fn)
        task.arm(self.now + interval if start is None else start)
        return task

    def register(self, target: str, handler: Handler) -> None:
        self._handlers[target] = handler

    def pending(self) -> int:
        return sum(1 for e in self._queue if not e.cancelled)

    # -- running ----------------------------------------------------------

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with ``fire_at <= t_end``; leave ``now == t_end``."""
        t_end = int(t_end)
        if t_end < self.now:
            raise SchedulingInPast(f"t_end={t_end} is before now={self.now}")
        count = 0
        queue = self._queue
        while queue and queue[0].fire_at <= t_end:
            event = heapq.heappop(queue)
            if event.cancelled:
                continue
            if self.realtime:
                self._pace(event.fire_at)
            self.now = event.fire_at
            if self.record_trace:
                self.trace.append((event.fire_at, event.seq, event.target))
            payload = event.payload
            if callable(payload):
                payload()
            else:
                handler = self._handlers.get(event.target)
                if handler is not None:
                    handler(payload)
            count += 1
        if self.realtime:
            self._pace(t_end)
        self.now = t_end
        self.dispatched += count
        return count

    def run_for(self, duration: int) -> int:
        return self.run_until(self.now + int(duration))

    def _pace(self, fire_at: int) -> None:
        gap = fire_at - self.now
        if gap > 0:
            self._sleep(gap / 1000.0 * self.realtime)

    # -- randomness -------------------------------------------------------

    def stream(self, name: str) -> RngStream:
        stream = self._streams.get(name)
        if stream is None:
            stream = self._streams[name] = RngStream(self.seed, name)
        return stream

    def rng(self, name: str) -> float:
        """Next uniform [0, 1) draw from the named stream."""
        return self.stream(name).random()


class PeriodicTask:
    def __init__(self, sim: Simulation, interval: int, target: str, fn: Callable[[], Any]):
        if interval <= 0:
            raise ValueError("interval must be positive")
        self.sim = sim
        self.interval = int(interval)
        self.target = target
        self.fn = fn
        self._event: ScheduledEvent | None = None
        self.active = True

    def arm(self, at: int) -> None:
        self._event = self.sim.schedule(at, self.target, self._fire)

    def _fire(self) -> None:
        if not self.active:
            return
        if self.fn() is False:
            self.active = False
            return
        if self.active:
            self.arm(self.sim.now + self.interval)

    def cancel(self) -> None:
        self.active = False
        if self._event is not None:
            self._event.cancel()
