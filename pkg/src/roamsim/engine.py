"""Deterministic discrete-event core.

The clock is an integer microsecond counter.  Events scheduled for the same
instant execute in insertion order, so a run is a pure function of the
scenario and the seed.
"""

from __future__ import annotations

import heapq
from typing import Callable

Action = Callable[[], None]


class PastTimeError(ValueError):
    """Raised when an event is scheduled before the current clock."""


class EventQueue:
    """Min-heap of (fire_time, seq) ordered events with cancellation."""

    def __init__(self) -> None:
        self.clock: int = 0
        self._heap: list[tuple[int, int, Action]] = []
        self._next_seq = 0
        self._cancelled: set[int] = set()

    def schedule(self, fire_time: int, action: Action) -> int:
        """Enqueue `action` at `fire_time`; returns an id usable for cancel()."""
        if fire_time < self.clock:
            raise PastTimeError(f"fire_time {fire_time} is before clock {self.clock}")
        seq = self._next_seq
        self._next_seq += 1
        heapq.heappush(self._heap, (fire_time, seq, action))
        return seq

    def schedule_in(self, delay: int, action: Action) -> int:
        return self.schedule(self.clock + delay, action)

    def cancel(self, event_id: int) -> None:
        """Cancelled events stay in the heap but are skipped when popped."""
        self._cancelled.add(event_id)

    def pending(self) -> int:
        return len(self._heap) - len(self._cancelled)

    def run_until(self, t_end: int) -> int:
        """Execute every event with fire_time <= t_end; leaves clock at t_end."""
        executed = 0
        while self._heap and self._heap[0][0] <= t_end:
            fire_time, seq, action = heapq.heappop(self._heap)
            if seq in self._cancelled:
                self._cancelled.discard(seq)
                continue
            self.clock = fire_time
            action()
            executed += 1
        if t_end > self.clock:
            self.clock = t_end
        return executed
