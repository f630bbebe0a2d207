"""Wall and virtual clocks behind one interface.

Timestamps in the event log come from exactly one clock per run, so
wall-time and simulated runs never mix time bases.
"""

from __future__ import annotations

import time


class WallClock:
    """Monotonic wall clock with an epoch at construction."""

    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0


class VirtualClock:
    """Clock advanced explicitly by the simulated backend."""

    def __init__(self, start: float = 0.0) -> None:
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError(f"cannot advance clock by {dt}")
        self._now += dt
        return self._now
