"""Deterministic discrete-event scheduler.

All simulation timing flows through one scheduler instance, so a run is fully
determined by the scheduled callbacks. For live serving the same scheduler is
paced against the wall clock by a driver thread; nothing inside the simulation
ever reads real time.
"""

from __future__ import annotations

import heapq
import threading
import time


class EventScheduler:
    def __init__(self, start: float = 0.0):
        self.now = float(start)
        self._heap = []
        self._counter = 0
        self._lock = threading.RLock()

    def call_at(self, t: float, fn, priority: int = 0):
        """Schedule fn(t) at simulated time t. Ties break by priority, then
        insertion order, keeping event order reproducible."""
        with self._lock:
            if t < self.now:
                t = self.now
            heapq.heappush(self._heap, (t, priority, self._counter, fn))
            self._counter += 1

    def call_in(self, delay: float, fn, priority: int = 0):
        self.call_at(self.now + delay, fn, priority)

    def run_until(self, t_end: float):
        """Run every event due at or before t_end; leaves now == t_end."""
        while True:
            with self._lock:
                if not self._heap or self._heap[0][0] > t_end:
                    break
                t, _, _, fn = heapq.heappop(self._heap)
                self.now = t
            fn(t)
        self.now = t_end

    def run_for(self, duration: float):
        self.run_until(self.now + duration)

    def pending(self) -> int:
        with self._lock:
            return len(self._heap)


class WallClockDriver:
    """Advances a scheduler in step with real time on a background thread."""

    def __init__(self, scheduler: EventScheduler, tick_s: float = 0.002):
        self.scheduler = scheduler
        self.tick_s = tick_s
        self._stop = threading.Event()
        self._thread = None

    def start(self):
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        t0 = time.monotonic() - self.scheduler.now
        while not self._stop.is_set():
            self.scheduler.run_until(time.monotonic() - t0)
            time.sleep(self.tick_s)

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None
