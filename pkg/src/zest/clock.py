"""Time source abstraction.

Nodes take a clock so expiry behaviour is testable: the system clock for
real deployments, a simulated clock that only moves when told for tests.
Timestamps are integer milliseconds since the Unix epoch.
"""

from __future__ import annotations

import threading
import time


class SystemClock:
    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000


class SimulatedClock:
    """Manually advanced clock; safe to advance from any thread."""

    def __init__(self, start_ms: int = 0):
        self._now_ms = start_ms
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return self._now_ms

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._now_ms += int(round(seconds * 1000))

    def set(self, now_ms: int) -> None:
        with self._lock:
            self._now_ms = now_ms
