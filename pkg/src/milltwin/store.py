"""Append-only per-channel sample log plus JSONL record log for twin records.

Layout under the store root:

    <channel>/<YYYY-MM-DD>.log   one "ISO_TS,value" line per sample
    records/<kind>.jsonl         twin records (work orders, incidents, ...)
    bundles/, models/            managed by the pipeline / learning modules
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

from .errors import Invalid, NotFound
from .timebase import day_bounds, day_of, from_iso, to_iso

RESERVED_DIRS = {"records", "bundles", "models"}

CSV_HEADER = "fecha,hora,Fase 1 (A),Fase 2 (A),Fase 3 (A)"


@dataclass(frozen=True, order=True)
class Sample:
    ts: int
    value: float


class TimeSeriesStore:
    """Single writer per channel partition, any number of readers."""

    def __init__(self, root: str | Path, channels: Iterable[str] = ()):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._channels: set[str] = set()
        self._locks: dict[str, threading.Lock] = {}
        self._last_ts: dict[str, int | None] = {}
        for cid in channels:
            self.add_channel(cid)
        # channels already on disk are picked up on restart
        for entry in self.root.iterdir():
            if entry.is_dir() and entry.name not in RESERVED_DIRS:
                self.add_channel(entry.name)

    def add_channel(self, channel: str) -> None:
        if channel in RESERVED_DIRS:
            raise Invalid(f"channel id {channel!r} is reserved")
        if channel not in self._channels:
            self._channels.add(channel)
            self._locks[channel] = threading.Lock()

    @property
    def channels(self) -> set[str]:
        return set(self._channels)

    def _check(self, channel: str) -> None:
        if channel not in self._channels:
            raise NotFound(f"unknown channel {channel!r}")

    def _partition(self, channel: str, day: date) -> Path:
        return self.root / channel / f"{day.isoformat()}.log"

    def last_ts(self, channel: str) -> int | None:
        self._check(channel)
        if channel not in self._last_ts:
            self._last_ts[channel] = self._scan_last_ts(channel)
        return self._last_ts[channel]

    def _scan_last_ts(self, channel: str) -> int | None:
        cdir = self.root / channel
        if not cdir.is_dir():
            return None
        parts = sorted(cdir.glob("*.log"))
        if not parts:
            return None
        with open(parts[-1], "rb") as fh:
            tail = fh.read().rstrip(b"\n")
        if not tail:
            return None
        line = tail.rsplit(b"\n", 1)[-1].decode()
        return from_iso(line.split(",", 1)[0])

    def append(self, channel: str, samples: Sequence[Sample]) -> int:
        """Append strictly-newer samples; ts at or before the stored tail are dropped.

        The batch itself must be strictly increasing.
        """
        self._check(channel)
        for a, b in zip(samples, samples[1:]):
            if b.ts <= a.ts:
                raise Invalid(f"batch not strictly increasing at ts={b.ts}")
        with self._locks[channel]:
            last = self.last_ts(channel)
            fresh = [s for s in samples if last is None or s.ts > last]
            if not fresh:
                return 0
            by_day: dict[date, list[Sample]] = {}
            for s in fresh:
                by_day.setdefault(day_of(s.ts), []).append(s)
            (self.root / channel).mkdir(parents=True, exist_ok=True)
            for day in sorted(by_day):
                path = self._partition(channel, day)
                with open(path, "a", encoding="utf-8") as fh:
                    for s in by_day[day]:
                        fh.write(f"{to_iso(s.ts)},{s.value!r}\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            self._last_ts[channel] = fresh[-1].ts
            return len(fresh)

    def query(self, channel: str, from_ts: int, to_ts: int) -> list[Sample]:
        """Samples with from_ts <= ts <= to_ts, in order."""
        self._check(channel)
        if to_ts < from_ts:
            return []
        cdir = self.root / channel
        if not cdir.is_dir():
            return []
        first_day, last_day = day_of(from_ts), day_of(to_ts)
        out: list[Sample] = []
        for path in sorted(cdir.glob("*.log")):
            day = date.fromisoformat(path.stem)
            if day < first_day or day > last_day:
                continue
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    iso, raw = line.split(",", 1)
                    ts = from_iso(iso)
                    if from_ts <= ts <= to_ts:
                        out.append(Sample(ts, float(raw)))
        return out

    def query_day(self, channel: str, day: date) -> list[Sample]:
        lo, hi = day_bounds(day)
        return self.query(channel, lo, hi)

    def days(self, channel: str) -> list[date]:
        """UTC days that have at least one partition for the channel."""
        self._check(channel)
        cdir = self.root / channel
        if not cdir.is_dir():
            return []
        return sorted(date.fromisoformat(p.stem) for p in cdir.glob("*.log"))

    def latest(self, channel: str, at: int | None = None) -> Sample | None:
        self._check(channel)
        last = self.last_ts(channel)
        if last is None:
            return None
        if at is None or at >= last:
            got = self.query(channel, last, last)
            return got[0] if got else None
        rows = self.query(channel, at - 3600, at)
        return rows[-1] if rows else None


class RecordLog:
    """Append-only JSONL log per record kind, used to persist twin records."""

    def __init__(self, root: str | Path):
        self.dir = Path(root) / "records"
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, kind: str, payload: dict) -> None:
        path = self.dir / f"{kind}.jsonl"
        with self._lock:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(payload, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def read(self, kind: str) -> list[dict]:
        path = self.dir / f"{kind}.jsonl"
        if not path.is_file():
            return []
        out = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out


def export_csv(store: TimeSeriesStore, day: date, channels: Sequence[str]) -> str:
    """Daily three-phase current export, one row per second where all channels have data.

    Matches the HMI data-table layout: dd/mm/yyyy dates, H:MM:SS times, two decimals.
    """
    if len(channels) != 3:
        raise Invalid("export needs exactly the three current channels")
    columns = [
        {s.ts: s.value for s in store.query_day(ch, day)} for ch in channels
    ]
    common = sorted(set(columns[0]) & set(columns[1]) & set(columns[2]))
    lines = [CSV_HEADER]
    for ts in common:
        rem = ts % 86_400
        hh, mm, ss = rem // 3600, (rem % 3600) // 60, rem % 60
        d = day_of(ts)
        fecha = f"{d.day:02d}/{d.month:02d}/{d.year:04d}"
        hora = f"{hh}:{mm:02d}:{ss:02d}"
        vals = ",".join(f"{col[ts]:.2f}" for col in columns)
        lines.append(f"{fecha},{hora},{vals}")
    return "\n".join(lines) + "\n"


def read_csv_export(text: str) -> list[tuple[int, float, float, float]]:
    """Parse an export back into (ts, v1, v2, v3) rows; test-side inverse of export_csv."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise Invalid("bad export header")
    rows = []
    for ln in lines[1:]:
        fecha, hora, v1, v2, v3 = ln.split(",")
        dd, mm, yyyy = (int(p) for p in fecha.split("/"))
        hh, mi, ss = (int(p) for p in hora.split(":"))
        base, _ = day_bounds(date(yyyy, mm, dd))
        ts = base + hh * 3600 + mi * 60 + ss
        rows.append((ts, float(v1), float(v2), float(v3)))
    return rows
