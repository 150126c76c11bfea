"""In-process pub/sub fan-out behind the /api/events stream.

Every subscriber gets a bounded queue; a subscriber that stops draining is
dropped rather than blocking publishers.
"""
from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass
from typing import Iterator

SUBSCRIBER_BUFFER = 512


@dataclass(frozen=True)
class Event:
    seq: int
    type: str
    payload: dict

    def sse(self) -> str:
        data = json.dumps({"seq": self.seq, "type": self.type, "payload": self.payload})
        return f"id: {self.seq}\nevent: {self.type}\ndata: {data}\n\n"


class Subscription:
    def __init__(self, bus: "EventBus"):
        self._bus = bus
        self._queue: queue.Queue[Event] = queue.Queue(maxsize=SUBSCRIBER_BUFFER)
        self.dropped = False

    def offer(self, event: Event) -> None:
        try:
            self._queue.put_nowait(event)
        except queue.Full:
            self.dropped = True
            self._bus.unsubscribe(self)

    def get(self, timeout: float | None = None) -> Event | None:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def drain(self) -> list[Event]:
        out = []
        while True:
            try:
                out.append(self._queue.get_nowait())
            except queue.Empty:
                return out

    def close(self) -> None:
        self._bus.unsubscribe(self)

    def __iter__(self) -> Iterator[Event]:
        while True:
            ev = self.get(timeout=1.0)
            if ev is not None:
                yield ev


class EventBus:
    def __init__(self):
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []
        self._seq = 0
        self.log: list[Event] = []  # bounded recent history for reconnects
        self._log_cap = 1000

    def subscribe(self) -> Subscription:
        sub = Subscription(self)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def publish(self, type_: str, payload: dict) -> Event:
        with self._lock:
            self._seq += 1
            event = Event(self._seq, type_, payload)
            self.log.append(event)
            if len(self.log) > self._log_cap:
                del self.log[: len(self.log) - self._log_cap]
            subs = list(self._subs)
        for sub in subs:
            sub.offer(event)
        return event

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subs)
