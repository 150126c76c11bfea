"""Startup evaluation against the active reference model, the live monitor,
and the work-order inactivity watch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import Invalid, SegmentationFailed
from .learning import ReferenceModel
from .pipeline import (AlignedStartup, CanonicalLengths, DetectConfig,
                       PhaseBoundaries, RawStartup, SegmentConfig, align,
                       find_steps, normalize, resample_segment, segment_phases,
                       startup_to_bundle)
from .store import TimeSeriesStore
from .twin import AlertKind, AlertSeverity, IncidentSeverity, TwinRegistry

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionPolicy:
    """Trigger rule for classifying a startup and raising alerts.

    A startup is anomalous when any violating run reaches consecutive_limit
    samples or the overall violation fraction exceeds fraction_limit. Alerts
    are raised for policy-triggering runs only, so single-sample noise blips
    never cause alert storms.
    """

    consecutive_limit: int = 3
    fraction_limit: float = 0.05
    critical_excess: float = 0.25

    def __post_init__(self):
        if self.consecutive_limit < 1:
            raise Invalid("consecutive_limit must be >= 1")
        if not 0 < self.fraction_limit < 1:
            raise Invalid("fraction_limit must be in (0, 1)")

    def to_dict(self) -> dict:
        return {"consecutive_limit": self.consecutive_limit,
                "fraction_limit": self.fraction_limit,
                "critical_excess": self.critical_excess}


@dataclass(frozen=True)
class ViolationRun:
    channel: str
    phase: int
    start: int
    length: int
    max_excess: float

    def to_dict(self) -> dict:
        return {"channel": self.channel, "phase": self.phase, "start": self.start,
                "length": self.length, "max_excess": self.max_excess}


@dataclass
class Verdict:
    startup_id: str
    mask: np.ndarray  # channels x length, True where violating
    runs: list[ViolationRun]
    classification: str  # normal | anomalous
    policy: DetectionPolicy

    def to_dict(self) -> dict:
        return {"startup_id": self.startup_id,
                "violation_fraction": float(self.mask.mean()) if self.mask.size else 0.0,
                "runs": [r.to_dict() for r in self.runs],
                "classification": self.classification,
                "policy": self.policy.to_dict()}


def _runs_in_row(excess_row: np.ndarray, channel: str, offset: int,
                 lengths: CanonicalLengths) -> list[ViolationRun]:
    runs = []
    n = len(excess_row)
    i = 0
    while i < n:
        if excess_row[i] > 0:
            j = i
            while j < n and excess_row[j] > 0:
                j += 1
            runs.append(ViolationRun(channel=channel,
                                     phase=lengths.phase_of_index(offset + i),
                                     start=offset + i, length=j - i,
                                     max_excess=float(excess_row[i:j].max())))
            i = j
        else:
            i += 1
    return runs


def evaluate_startup(aligned: AlignedStartup, ref: ReferenceModel,
                     policy: DetectionPolicy = DetectionPolicy()) -> Verdict:
    """Pure function: normalized aligned trace vs the reference band."""
    if aligned.lengths.lengths != ref.lengths.lengths or aligned.channels != ref.channels:
        raise Invalid("trace shape does not match the reference model")
    x = aligned.matrix
    excess = np.maximum(np.maximum(ref.lo - x, x - ref.hi), 0.0)
    mask = excess > 0
    runs: list[ViolationRun] = []
    for i, ch in enumerate(aligned.channels):
        runs.extend(_runs_in_row(excess[i], ch, 0, ref.lengths))
    anomalous = (any(r.length >= policy.consecutive_limit for r in runs)
                 or (mask.size > 0 and mask.mean() > policy.fraction_limit))
    return Verdict(startup_id=aligned.id, mask=mask, runs=runs,
                   classification="anomalous" if anomalous else "normal",
                   policy=policy)


def consolidate_runs(runs: Sequence[ViolationRun]) -> list[ViolationRun]:
    """Merge time-overlapping runs across channels into one episode.

    A spike hits all three current lines at once; that is one violation, not
    three. The reported channel/phase/excess come from the worst run.
    """
    ordered = sorted(runs, key=lambda r: (r.start, r.channel))
    groups: list[list[ViolationRun]] = []
    group_end = -1
    for r in ordered:
        if groups and r.start < group_end:
            groups[-1].append(r)
            group_end = max(group_end, r.start + r.length)
        else:
            groups.append([r])
            group_end = r.start + r.length
    return [max(g, key=lambda r: (r.max_excess, -ord(r.channel[0]))) for g in groups]


def alert_payloads(verdict: Verdict, policy: DetectionPolicy) -> list[dict]:
    """One alert per policy-triggering violation episode."""
    triggering = [r for r in verdict.runs if r.length >= policy.consecutive_limit]
    if not triggering and verdict.classification == "anomalous" and verdict.runs:
        triggering = [max(verdict.runs, key=lambda r: r.max_excess)]
    out = []
    for r in consolidate_runs(triggering):
        severity = (AlertSeverity.critical if r.max_excess > policy.critical_excess
                    else AlertSeverity.warning)
        out.append({"kind": AlertKind.envelope_violation, "severity": severity,
                    "channel": r.channel, "startup_phase": r.phase,
                    "magnitude": r.max_excess})
    return out


def evaluate_and_alert(aligned: AlignedStartup, ref: ReferenceModel,
                       policy: DetectionPolicy, registry: TwinRegistry,
                       now: int | None = None) -> Verdict:
    verdict = evaluate_startup(aligned, ref, policy)
    for payload in alert_payloads(verdict, policy):
        registry.raise_alert(payload["kind"], payload["severity"],
                             channel=payload["channel"],
                             startup_phase=payload["startup_phase"],
                             magnitude=payload["magnitude"], now=now)
    return verdict


# ---- live monitoring -----------------------------------------------------------------


class LiveMonitor:
    """Single consumer of the store tail: detects startup onsets, segments and
    evaluates phases incrementally, and raises alerts as each phase closes.
    """

    def __init__(self, store: TimeSeriesStore, registry: TwinRegistry,
                 model_source: Callable[[], Optional[ReferenceModel]],
                 policy: DetectionPolicy = DetectionPolicy(),
                 detect_cfg: DetectConfig = DetectConfig(),
                 segment_cfg: SegmentConfig = SegmentConfig(),
                 channels: Sequence[str] | None = None,
                 bundle_sink: Callable[[dict], None] | None = None,
                 on_event: Callable[[str, dict], None] | None = None):
        self.store = store
        self.registry = registry
        self.model_source = model_source
        self.policy = policy
        self.detect_cfg = detect_cfg
        self.segment_cfg = segment_cfg
        self.channels = tuple(channels) if channels else ("cur-l1", "cur-l2", "cur-l3")
        self.bundle_sink = bundle_sink
        self.on_event = on_event
        self.degraded = False
        self._cursor: int | None = None
        self._buffer: dict[int, list[float]] = {}  # ts -> [v1, v2, v3]
        self._partial: dict[int, float] = {}
        self._state = "idle"
        self._armed = False
        self._onset_ts: int | None = None
        # boundaries each phase was last evaluated with; alerts dedupe on
        # (channel, phase) so boundary refinements re-evaluate without storms
        self._eval_bounds: dict[int, tuple[int, int]] = {}
        self._alerted: set[tuple[str, int]] = set()
        # incremental onset-scan state: each complete second is examined once,
        # in time order, so arming cannot leak backwards across polls
        self._scan_pos: int | None = None
        self._prev_scanned: int | None = None
        self._rise_start: int | None = None
        self._rise_len = 0

    def _emit(self, kind: str, payload: dict) -> None:
        if self.on_event is not None:
            self.on_event(kind, payload)

    def poll(self, now: int) -> None:
        model = self.model_source()
        if model is None:
            self.degraded = True
            return
        self.degraded = False
        self._pull(now)
        if self._state == "idle":
            self._scan_for_onset()
        if self._state == "capturing":
            self._advance_capture(model, now)

    # -- sample intake ------------------------------------------------------------

    def _pull(self, now: int) -> None:
        start = 0 if self._cursor is None else self._cursor + 1
        per_channel = [self.store.query(ch, start, now) for ch in self.channels]
        newest = self._cursor
        for idx, rows in enumerate(per_channel):
            for s in rows:
                slot = self._buffer.setdefault(s.ts, [np.nan] * 3)
                slot[idx] = s.value
                newest = s.ts if newest is None else max(newest, s.ts)
        self._cursor = newest
        horizon = (self._onset_ts or (newest or 0)) - 900
        for ts in [t for t in self._buffer if t < horizon]:
            del self._buffer[ts]

    def _complete_ts(self) -> list[int]:
        return sorted(t for t, vals in self._buffer.items()
                      if not any(np.isnan(v) for v in vals))

    def _scan_for_onset(self) -> None:
        cfg = self.detect_cfg
        threshold = cfg.idle_total_a + cfg.rise_delta_a
        for ts in self._complete_ts():
            if self._scan_pos is not None and ts <= self._scan_pos:
                continue
            total = sum(self._buffer[ts])
            if total <= threshold:
                self._armed = True
                self._rise_start = None
                self._rise_len = 0
            elif self._armed:
                contiguous = (self._prev_scanned is not None
                              and ts == self._prev_scanned + 1)
                if self._rise_start is None or not contiguous:
                    self._rise_start = ts
                    self._rise_len = 1
                else:
                    self._rise_len += 1
                if self._rise_len >= cfg.confirm_samples:
                    self._begin_capture(self._rise_start)
                    self._scan_pos = ts
                    self._prev_scanned = ts
                    return
            self._scan_pos = ts
            self._prev_scanned = ts

    def _begin_capture(self, onset_ts: int) -> None:
        self._onset_ts = onset_ts
        self._state = "capturing"
        self._armed = False
        self._rise_start = None
        self._rise_len = 0
        self._eval_bounds = {}
        self._alerted = set()
        self._emit("startup_onset", {"onset_ts": onset_ts})

    # -- capture / incremental evaluation --------------------------------------------

    def _capture_matrix(self) -> tuple[np.ndarray, list[int]]:
        end = self._onset_ts + self.detect_cfg.window_s
        ts_list = [t for t in self._complete_ts() if self._onset_ts <= t < end]
        matrix = np.array([[self._buffer[t][i] for t in ts_list] for i in range(3)])
        return matrix, ts_list

    def _advance_capture(self, model: ReferenceModel, now: int) -> None:
        matrix, ts_list = self._capture_matrix()
        if matrix.size == 0:
            return
        total = matrix.sum(axis=0)
        steps = find_steps(total, self.segment_cfg)
        usable = [s for s in steps if s >= self.segment_cfg.min_segment_s]
        window_done = now >= self._onset_ts + self.detect_cfg.window_s - 1
        boundaries = [0] + usable[:3]
        # a phase closes when its ending boundary appears; if later data revises
        # a boundary (e.g. a spike edge gets cancelled), re-evaluate that phase
        for p in range(1, min(len(usable), 3) + 1):
            bounds = (boundaries[p - 1], boundaries[p])
            if bounds[1] - bounds[0] < self.segment_cfg.min_segment_s:
                continue
            if self._eval_bounds.get(p) != bounds:
                self._evaluate_phase(matrix[:, bounds[0]:bounds[1]], p, model, now)
                self._eval_bounds[p] = bounds
        if window_done:
            self._finish(matrix, usable, model, now)

    def _evaluate_phase(self, seg: np.ndarray, phase: int, model: ReferenceModel,
                        now: int) -> None:
        runs: list[ViolationRun] = []
        sl = model.lengths.phase_slice(phase)
        target = model.lengths.lengths[phase - 1]
        for i, ch in enumerate(self.channels):
            lo, hi = model.normalization.mins[i], model.normalization.maxs[i]
            span = hi - lo
            row = resample_segment(seg[i], target)
            norm = np.zeros_like(row) if span <= 0 else (row - lo) / span
            excess = np.maximum(np.maximum(model.lo[i, sl] - norm,
                                           norm - model.hi[i, sl]), 0.0)
            runs.extend(_runs_in_row(excess, ch, sl.start, model.lengths))
        self._raise_new_alerts(runs, now)

    def _raise_new_alerts(self, runs: list[ViolationRun], now: int) -> None:
        triggering = [r for r in runs if r.length >= self.policy.consecutive_limit]
        for r in consolidate_runs(triggering):
            key = (r.channel, r.phase)
            if key in self._alerted:
                continue
            self._alerted.add(key)
            severity = (AlertSeverity.critical
                        if r.max_excess > self.policy.critical_excess
                        else AlertSeverity.warning)
            self.registry.raise_alert(AlertKind.envelope_violation, severity,
                                      channel=r.channel, startup_phase=r.phase,
                                      magnitude=r.max_excess, now=now)

    def _finish(self, matrix: np.ndarray, usable: list[int], model: ReferenceModel,
                now: int) -> None:
        from .timebase import day_of, to_iso

        sid = ("su-" + to_iso(self._onset_ts).replace("-", "").replace(":", "")
               .replace("T", "-").rstrip("Z"))
        raw = RawStartup(id=sid, date=day_of(self._onset_ts).isoformat(),
                         onset_ts=self._onset_ts, channels=self.channels,
                         matrix=matrix,
                         coverage=matrix.shape[1] / self.detect_cfg.window_s)
        bounds: PhaseBoundaries | None = None
        verdict_doc: dict | None = None
        try:
            bounds = segment_phases(raw, self.segment_cfg)
            aligned = align(raw, bounds, model.lengths)
            normed = normalize(aligned, model.normalization)
            verdict = evaluate_startup(normed, model, self.policy)
            # final pass over the whole startup catches anything the
            # incremental path missed (phase 4, revised boundaries)
            self._raise_new_alerts(verdict.runs, now)
            verdict_doc = verdict.to_dict()
            self._emit("startup_evaluated", verdict_doc)
        except SegmentationFailed as exc:
            # flag for expert override instead of crashing the monitor
            self.registry.log_incident(
                f"automatic segmentation failed for {sid}: {exc}; expert override needed",
                IncidentSeverity.warning)
            self._emit("segmentation_failed", {"startup_id": sid, "error": str(exc)})
        if self.bundle_sink is not None:
            bundle = startup_to_bundle(raw, bounds,
                                       provenance={"source": "live_monitor"})
            if verdict_doc is not None:
                bundle["verdict"] = verdict_doc
            self.bundle_sink(bundle)
        self._state = "idle"
        self._onset_ts = None
        self._buffer = {t: v for t, v in self._buffer.items() if t > raw.onset_ts + raw.length}


# ---- inactivity watch ---------------------------------------------------------------


class InactivityWatch:
    """Fires one event per idle episode while a work order is open; re-arms on activity."""

    def __init__(self, registry: TwinRegistry, window_s: int = 120,
                 idle_total_a: float = 1.5, rise_delta_a: float = 1.0,
                 on_event: Callable[[str, dict], None] | None = None):
        self.registry = registry
        self.window_s = window_s
        self.threshold = idle_total_a + rise_delta_a
        self.on_event = on_event
        self._idle_since: int | None = None
        self._fired = False
        self.events: list[dict] = []

    def observe(self, ts: int, total_current: float) -> Optional[dict]:
        order = self.registry.open_order()
        if order is None:
            self._idle_since = None
            self._fired = False
            return None
        if total_current < self.threshold:
            if self._idle_since is None:
                self._idle_since = ts
            if not self._fired and ts - self._idle_since + 1 >= self.window_s:
                self._fired = True
                event = {"work_order": order.id, "idle_since": self._idle_since,
                         "ts": ts, "window_s": self.window_s}
                self.events.append(event)
                if self.on_event is not None:
                    self.on_event("inactivity", event)
                return event
        else:
            self._idle_since = None
            self._fired = False
        return None
