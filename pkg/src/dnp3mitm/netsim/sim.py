"""Discrete-event scheduler.

Simulated time is kept as integer microseconds so that arithmetic on
timestamps is exact; helpers convert to milliseconds for reports.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable

from dnp3mitm.errors import SimulationError

US_PER_MS = 1000
US_PER_S = 1_000_000


def ms(value: float) -> int:
    """Milliseconds to simulator ticks."""
    return int(round(value * US_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * US_PER_S))


def to_ms(ticks: int) -> float:
    return ticks / US_PER_MS


class SchedulingInPast(SimulationError):
    pass


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    action: Callable[[], None] = field(compare=False)
    label: str = field(default="", compare=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Single-threaded event loop ordered by ``(time, insertion order)``."""

    def __init__(self) -> None:
        self.now = 0
        self._queue: list[SimEvent] = []
        self._seq = 0
        self.fired = 0

    @property
    def now_ms(self) -> float:
        return to_ms(self.now)

    def at(self, time: int, action: Callable[[], None], label: str = "") -> SimEvent:
        if time < self.now:
            raise SchedulingInPast(f"event {label!r} at {time} us is before now ({self.now} us)")
        event = SimEvent(time, self._seq, action, label)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def after(self, delay: int, action: Callable[[], None], label: str = "") -> SimEvent:
        return self.at(self.now + delay, action, label)

    def pending(self) -> int:
        return sum(1 for e in self._queue if not e.cancelled)

    def run_until(self, t_end: int) -> None:
        """Fire every event with ``time <= t_end``, then park the clock at ``t_end``."""
        while self._queue and self._queue[0].time <= t_end:
            event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self.now = event.time
            self.fired += 1
            event.action()
        self.now = max(self.now, t_end)
