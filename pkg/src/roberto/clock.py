"""Injectable clocks. Production runs on the wall clock; every test and the
simulate CLI drive a virtual clock so end-to-end runs are deterministic."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from typing import Protocol


class Clock(Protocol):
    def now(self) -> datetime: ...


class WallClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class VirtualClock:
    def __init__(self, start: datetime):
        if start.tzinfo is None:
            raise ValueError("virtual clock needs an aware start instant")
        self._now = start.astimezone(timezone.utc)

    def now(self) -> datetime:
        return self._now

    def advance(self, seconds: float = 0, *, minutes: float = 0) -> datetime:
        self._now += timedelta(seconds=seconds, minutes=minutes)
        return self._now

    def set(self, instant: datetime) -> None:
        if instant.astimezone(timezone.utc) < self._now:
            raise ValueError("virtual clock cannot move backwards")
        self._now = instant.astimezone(timezone.utc)
