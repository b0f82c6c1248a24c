"""Session clocks.

Scripted sessions use a logical clock (fixed start, one-second ticks) so
every timestamped artifact is byte-reproducible; live sessions use UTC
wall time.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

DEFAULT_CLOCK_START = "2025-01-01T00:00:00+00:00"


class Clock:
    def now(self) -> str:
        raise NotImplementedError


class LogicalClock(Clock):
    """Deterministic clock: returns start, start+step, start+2*step, ..."""

    def __init__(self, start: str = DEFAULT_CLOCK_START, step_seconds: int = 1) -> None:
        self._current = datetime.fromisoformat(start)
        self._step = timedelta(seconds=step_seconds)

    def now(self) -> str:
        value = self._current
        self._current += self._step
        return value.isoformat()


class SystemClock(Clock):
    def now(self) -> str:
        return datetime.now(timezone.utc).isoformat(timespec="seconds")
