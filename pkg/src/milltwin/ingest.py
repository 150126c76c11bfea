"""Gateway polling client: pulls the JSON API, validates, appends to the store.

Exactly-once by construction: the cursor is the store tail, so restarts resume
from what was durably written, and re-delivered samples are dropped.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import httpx

from .errors import NotFound
from .store import Sample, TimeSeriesStore
from .timebase import Clock, from_iso, to_iso
from .twin import AlertKind, AlertSeverity, TwinRegistry

log = logging.getLogger(__name__)

BACKOFF_INITIAL_S = 1.0
BACKOFF_MAX_S = 60.0
DEFAULT_GAP_ALERT_S = 10


class GatewayUnreachable(Exception):
    pass


class GatewayClient(Protocol):
    def channels(self) -> list[dict]: ...
    def data(self, channel: str, from_ts: int, to_ts: int) -> list[Sample]: ...


class HttpGatewayClient:
    def __init__(self, endpoint: str, timeout: float = 5.0):
        self.endpoint = endpoint.rstrip("/")
        self._client = httpx.Client(timeout=timeout)

    def channels(self) -> list[dict]:
        resp = self._get("/gw/channels", {})
        return resp.get("channels", [])

    def data(self, channel: str, from_ts: int, to_ts: int) -> list[Sample]:
        resp = self._get("/gw/data", {"channel": channel,
                                      "from": to_iso(from_ts), "to": to_iso(to_ts)})
        return [Sample(from_iso(row["ts"]), float(row["value"]))
                for row in resp.get("samples", [])]

    def _get(self, path: str, params: dict) -> dict:
        try:
            r = self._client.get(self.endpoint + path, params=params)
        except httpx.HTTPError as exc:
            raise GatewayUnreachable(str(exc)) from exc
        if r.status_code >= 500:
            raise GatewayUnreachable(f"gateway returned {r.status_code}")
        if r.status_code == 404:
            raise NotFound(r.json().get("error", "not found"))
        r.raise_for_status()
        return r.json()

    def close(self) -> None:
        self._client.close()


class InProcessGatewayClient:
    """Direct simulator binding for tests and the demo pipeline."""

    def __init__(self, sim):
        self.sim = sim

    def channels(self) -> list[dict]:
        if self.sim.outage:
            raise GatewayUnreachable("gateway outage")
        return self.sim.channels_payload()

    def data(self, channel: str, from_ts: int, to_ts: int) -> list[Sample]:
        if self.sim.outage:
            raise GatewayUnreachable("gateway outage")
        return list(self.sim.data(channel, from_ts, to_ts))


@dataclass
class IngestCursor:
    channel: str
    last_ts: Optional[int] = None  # monotonically non-decreasing

    @classmethod
    def resume(cls, store: TimeSeriesStore, channel: str) -> "IngestCursor":
        return cls(channel, store.last_ts(channel))


@dataclass(frozen=True)
class GapEvent:
    channel: str
    after_ts: int
    seconds: int  # missing span at the 1 s cadence


@dataclass
class PollResult:
    appended: int = 0
    rejected: int = 0
    gaps: list[GapEvent] = field(default_factory=list)
    samples: list[Sample] = field(default_factory=list)


def poll_once(client: GatewayClient, store: TimeSeriesStore, channel: str,
              cursor: IngestCursor, now: int, cadence_s: int = 1) -> PollResult:
    """One polling window [cursor+1, now]; duplicates dropped, gaps recorded."""
    from_ts = 0 if cursor.last_ts is None else cursor.last_ts + 1
    batch = client.data(channel, from_ts, now)
    result = PollResult()
    prev = cursor.last_ts
    for s in batch:
        if prev is not None and s.ts <= prev:
            result.rejected += 1
            continue
        if prev is not None and s.ts - prev > cadence_s:
            result.gaps.append(GapEvent(channel, prev, s.ts - prev - cadence_s))
        result.samples.append(s)
        prev = s.ts
    if result.samples:
        result.appended = store.append(channel, result.samples)
        cursor.last_ts = result.samples[-1].ts
    return result


class IngestService:
    """Continuous poller over all configured channels; never crashes the store."""

    def __init__(self, client: GatewayClient, store: TimeSeriesStore,
                 channels: Sequence[str], registry: TwinRegistry | None = None,
                 clock: Clock | None = None, interval_s: float = 1.0,
                 gap_alert_s: int = DEFAULT_GAP_ALERT_S,
                 on_samples: Callable[[str, list[Sample]], None] | None = None):
        self.client = client
        self.store = store
        self.channels = list(channels)
        self.registry = registry
        self.clock = clock or Clock()
        self.interval_s = interval_s
        self.gap_alert_s = gap_alert_s
        self.on_samples = on_samples
        self.cursors = {ch: IngestCursor.resume(store, ch) for ch in self.channels}
        self.degraded = False
        self._consecutive_failures = 0
        self._backoff_until = 0.0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def step(self, now: int | None = None) -> dict[str, PollResult]:
        """One polling pass across channels; safe to call from tests without threads."""
        now = self.clock.now() if now is None else now
        results: dict[str, PollResult] = {}
        if now < self._backoff_until:
            return results
        try:
            for ch in self.channels:
                batch = poll_once(self.client, self.store, ch, self.cursors[ch], now)
                results[ch] = batch
                if self.on_samples is not None and batch.appended:
                    self.on_samples(ch, batch.samples)
                for gap in batch.gaps:
                    if gap.seconds > self.gap_alert_s and self.registry is not None:
                        self.registry.raise_alert(
                            AlertKind.ingest_gap, AlertSeverity.warning,
                            channel=ch, magnitude=float(gap.seconds), now=now)
        except GatewayUnreachable as exc:
            self._consecutive_failures += 1
            backoff = min(BACKOFF_INITIAL_S * 2 ** (self._consecutive_failures - 1),
                          BACKOFF_MAX_S)
            self._backoff_until = now + backoff
            self.degraded = self._consecutive_failures >= 3
            log.warning("gateway unreachable (%s), backing off %.0fs", exc, backoff)
            return results
        self._consecutive_failures = 0
        self._backoff_until = 0.0
        self.degraded = False
        return results

    def run(self) -> None:
        while not self._stop.is_set():
            self.step()
            self.clock.sleep(self.interval_s)

    def start(self) -> "IngestService":
        self._thread = threading.Thread(target=self.run, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
