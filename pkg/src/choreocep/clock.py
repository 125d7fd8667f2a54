"""Virtual time: a settable clock and a timer queue driven by the harness."""

from __future__ import annotations

import heapq
import itertools
from typing import Callable


class VirtualClock:
    def __init__(self, start: int = 0) -> None:
        self.now = start

    def advance_to(self, t: int) -> None:
        if t < self.now:
            raise ValueError(f"clock cannot move backwards ({t} < {self.now})")
        self.now = t


class Timer:
    __slots__ = ("cancelled",)

    def __init__(self) -> None:
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Scheduler:
    """Timers ordered by (due time, creation order)."""

    def __init__(self, clock: VirtualClock) -> None:
        self.clock = clock
        self._heap: list = []
        self._n = itertools.count()

    def call_at(self, t: int, fn: Callable[[], None], timer: Timer | None = None) -> Timer:
        timer = timer or Timer()
        heapq.heappush(self._heap, (t, next(self._n), timer, fn))
        return timer

    def call_later(self, delay: int, fn: Callable[[], None]) -> Timer:
        return self.call_at(self.clock.now + delay, fn)

    def call_every(self, period: int, fn: Callable[[], None], first: int | None = None) -> Timer:
        """Run ``fn`` every ``period`` ms starting at ``first`` (default: now + period)."""
        if period <= 0:
            raise ValueError("period must be positive")
        timer = Timer()

        def tick(at: int) -> None:
            fn()
            if not timer.cancelled:
                self.call_at(at + period, lambda: tick(at + period), timer)

        start = self.clock.now + period if first is None else first
        self.call_at(start, lambda: tick(start), timer)
        return timer

    def next_time(self) -> int | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def run_next(self) -> bool:
        """Advance the clock to the earliest timer and run it."""
        t = self.next_time()
        if t is None:
            return False
        t, _, timer, fn = heapq.heappop(self._heap)
        self.clock.advance_to(max(t, self.clock.now))
        if not timer.cancelled:
            fn()
        return True
