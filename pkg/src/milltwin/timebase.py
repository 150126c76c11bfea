"""Timestamps are integer epoch seconds (UTC) internally; ISO-8601 Z at the edges."""
from __future__ import annotations

import threading
import time
from datetime import date, datetime, timezone

ISO_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


def to_iso(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime(ISO_FORMAT)


def from_iso(text: str) -> int:
    dt = datetime.strptime(text, ISO_FORMAT).replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_ts(value) -> int:
    """Accept epoch seconds (int/str) or ISO-8601 Z."""
    if isinstance(value, int):
        return value
    text = str(value)
    if text.lstrip("-").isdigit():
        return int(text)
    return from_iso(text)


def day_of(ts: int) -> date:
    return datetime.fromtimestamp(ts, tz=timezone.utc).date()


def day_bounds(day: date) -> tuple[int, int]:
    """[first, last] second of the UTC day, inclusive."""
    start = int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp())
    return start, start + 86_399


class Clock:
    """Wall clock; now() in whole epoch seconds."""

    def now(self) -> int:
        return int(time.time())

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class ManualClock(Clock):
    """Test clock advanced explicitly; sleep() advances instead of blocking."""

    def __init__(self, start: int = 0):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            return self._now

    def advance(self, seconds: int) -> None:
        with self._lock:
            self._now += seconds

    def set(self, ts: int) -> None:
        with self._lock:
            self._now = ts

    def sleep(self, seconds: float) -> None:
        self.advance(max(1, int(seconds)))
