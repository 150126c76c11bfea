"""Turns raw current streams into comparable startup feature vectors.

Stages: startup detection on total current, 4-phase segmentation (automatic
step detection with expert override), canonical-length alignment (the PLC-load
phase is fixed at 95 samples), and global min-max normalization.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import Invalid, NotFound, SegmentationFailed
from .store import RecordLog, Sample
from .timebase import day_of, from_iso, to_iso

PHASE2_CANONICAL_SAMPLES = 95
MIN_SEGMENT_SAMPLES = 3

CURRENT_CHANNEL_IDS = ("cur-l1", "cur-l2", "cur-l3")


@dataclass(frozen=True)
class DetectConfig:
    idle_total_a: float = 1.5
    rise_delta_a: float = 1.0
    confirm_samples: int = 2
    window_s: int = 600


@dataclass(frozen=True)
class SegmentConfig:
    step_delta_a: float = 0.8
    hysteresis_a: float = 0.25
    min_segment_s: int = MIN_SEGMENT_SAMPLES
    smooth_width: int = 3
    # a step pair closer than glitch_max_s that returns to the original level
    # is a transient (e.g. a current spike), not a phase change
    glitch_max_s: int = 12
    glitch_level_tol_a: float = 0.6


@dataclass(frozen=True)
class RawStartup:
    id: str
    date: str                 # ISO day of the onset
    onset_ts: int
    channels: tuple[str, ...]
    matrix: np.ndarray        # 3 x n, 1 Hz from onset_ts
    coverage: float = 1.0

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.channels):
            raise Invalid("one matrix row per channel required")

    @property
    def length(self) -> int:
        return self.matrix.shape[1]

    def total_current(self) -> np.ndarray:
        return self.matrix.sum(axis=0)


@dataclass(frozen=True)
class PhaseBoundaries:
    segments: tuple[tuple[int, int], ...]  # four [start, end) index pairs
    source: str = "auto"                   # auto | expert

    def __post_init__(self):
        if len(self.segments) != 4:
            raise Invalid("exactly four phase segments required")
        prev_end = None
        for s, e in self.segments:
            if e - s < MIN_SEGMENT_SAMPLES:
                raise Invalid(f"segment [{s},{e}) shorter than {MIN_SEGMENT_SAMPLES} samples")
            if prev_end is not None and s != prev_end:
                raise Invalid("segments must be contiguous and non-overlapping")
            prev_end = e
        if self.segments[0][0] != 0:
            raise Invalid("first segment must start at index 0")
        if self.source not in ("auto", "expert"):
            raise Invalid("source must be auto or expert")

    @property
    def durations(self) -> tuple[int, int, int, int]:
        return tuple(e - s for s, e in self.segments)  # type: ignore[return-value]

    def to_dict(self) -> dict:
        return {"segments": [list(seg) for seg in self.segments], "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseBoundaries":
        return cls(tuple(tuple(seg) for seg in d["segments"]), d.get("source", "auto"))


@dataclass(frozen=True)
class CanonicalLengths:
    lengths: tuple[int, int, int, int]

    def __post_init__(self):
        if self.lengths[1] != PHASE2_CANONICAL_SAMPLES:
            raise Invalid(f"phase-2 canonical length is fixed at {PHASE2_CANONICAL_SAMPLES}")
        if any(l < MIN_SEGMENT_SAMPLES for l in self.lengths):
            raise Invalid("canonical lengths must be >= 3 samples")

    @property
    def total(self) -> int:
        return sum(self.lengths)

    def phase_slice(self, phase: int) -> slice:
        """1-based startup phase -> feature-index slice."""
        start = sum(self.lengths[: phase - 1])
        return slice(start, start + self.lengths[phase - 1])

    def phase_of_index(self, idx: int) -> int:
        acc = 0
        for p, l in enumerate(self.lengths, start=1):
            acc += l
            if idx < acc:
                return p
        return 4

    def to_dict(self) -> dict:
        return {"lengths": list(self.lengths)}

    @classmethod
    def from_dict(cls, d: dict) -> "CanonicalLengths":
        return cls(tuple(d["lengths"]))


@dataclass(frozen=True)
class AlignedStartup:
    id: str
    channels: tuple[str, ...]
    matrix: np.ndarray  # 3 x total canonical length
    lengths: CanonicalLengths
    date: str = ""

    def __post_init__(self):
        if self.matrix.shape != (len(self.channels), self.lengths.total):
            raise Invalid("aligned matrix shape must be channels x total canonical length")


@dataclass(frozen=True)
class NormalizationParams:
    channels: tuple[str, ...]
    mins: tuple[float, ...]
    maxs: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.channels) == len(self.mins) == len(self.maxs)):
            raise Invalid("one (min, max) pair per channel required")

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "mins": list(self.mins),
                "maxs": list(self.maxs)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(tuple(d["channels"]), tuple(d["mins"]), tuple(d["maxs"]))


# ---- startup detection ----------------------------------------------------------


def detect_startups(series: Mapping[str, Sequence[Sample]],
                    config: DetectConfig = DetectConfig(),
                    channels: Sequence[str] = CURRENT_CHANNEL_IDS) -> list[RawStartup]:
    """Scan a day's three current channels for startup onsets.

    A startup begins at the first of >= confirm_samples consecutive seconds
    whose total current exceeds idle_total + rise_delta, after at least one
    idle second has armed the detector (so a machine that is already running
    when the stream begins, or keeps running past a capture window, does not
    retrigger). Channels are joined by timestamp, so per-channel gaps reduce
    coverage instead of breaking alignment.
    """
    if len(channels) != 3:
        raise Invalid("startup detection uses exactly the three current channels")
    maps = [{s.ts: s.value for s in series.get(ch, [])} for ch in channels]
    common = sorted(set(maps[0]) & set(maps[1]) & set(maps[2]))
    if not common:
        return []
    threshold = config.idle_total_a + config.rise_delta_a
    startups: list[RawStartup] = []
    armed = False
    i = 0
    while i < len(common):
        ts = common[i]
        if sum(m[ts] for m in maps) <= threshold:
            armed = True
        elif armed:
            confirmed = all(
                i + j < len(common)
                and common[i + j] == ts + j
                and sum(m[common[i + j]] for m in maps) > threshold
                for j in range(config.confirm_samples)
            )
            if confirmed:
                startups.append(_capture(maps, common, i, ts, config, channels))
                armed = False
                while i < len(common) and common[i] < ts + config.window_s:
                    i += 1
                continue
        i += 1
    return startups


def _capture(maps, common, start_idx, onset_ts, config, channels) -> RawStartup:
    window_ts = [t for t in common[start_idx:] if t < onset_ts + config.window_s]
    matrix = np.array([[m[t] for t in window_ts] for m in maps])
    day = day_of(onset_ts)
    sid = "su-" + to_iso(onset_ts).replace("-", "").replace(":", "").replace("T", "-").rstrip("Z")
    return RawStartup(id=sid, date=day.isoformat(), onset_ts=onset_ts,
                      channels=tuple(channels), matrix=matrix,
                      coverage=len(window_ts) / config.window_s)


# ---- phase segmentation ------------------------------------------------------------


def _trailing_mean(x: np.ndarray, width: int) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    for i in range(len(x)):
        lo = max(0, i - width + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def find_steps(total: Sequence[float], config: SegmentConfig = SegmentConfig()) -> list[int]:
    """Indices where the smoothed total current steps to a new sustained plateau.

    Tracks the current plateau level; a boundary fires when the smoothed signal
    deviates more than step_delta from it. For min_segment_s samples after a
    boundary the tracker follows the transient instead of re-triggering.
    Step pairs that bounce back to the pre-step level within glitch_max_s are
    transients (spikes), not phase boundaries, and are dropped.
    """
    x = np.asarray(total, dtype=float)
    if len(x) == 0:
        return []
    sm = _trailing_mean(x, config.smooth_width)
    level = x[0]
    in_transition = False
    steps: list[int] = []
    pre_levels: list[float] = []
    for i in range(1, len(sm)):
        if in_transition:
            # wait for the raw signal to flatten, then lock the new plateau
            if abs(x[i] - x[i - 1]) <= config.hysteresis_a:
                level = x[i]
                in_transition = False
            continue
        dev = sm[i] - level
        if abs(dev) > config.step_delta_a:
            steps.append(i)
            pre_levels.append(level)
            in_transition = True
        elif abs(dev) <= config.hysteresis_a:
            level = sm[i]  # plateau drift tracking
    # post-step plateau = pre-level of the next step, or the final tracked level
    post_levels = pre_levels[1:] + [level]
    kept: list[int] = []
    j = 0
    while j < len(steps):
        if (j + 1 < len(steps)
                and steps[j + 1] - steps[j] <= config.glitch_max_s
                and abs(post_levels[j + 1] - pre_levels[j]) <= config.glitch_level_tol_a):
            j += 2  # transient excursion: skip both edges
            continue
        if abs(post_levels[j] - pre_levels[j]) <= config.glitch_level_tol_a:
            j += 1  # blip swallowed by the dead time: no sustained level change
            continue
        kept.append(steps[j])
        j += 1
    return kept


def _step_magnitude(x: np.ndarray, idx: int, config: SegmentConfig) -> float:
    before = x[max(0, idx - config.min_segment_s):idx]
    after = x[idx + config.min_segment_s:idx + 2 * config.min_segment_s]
    if len(before) == 0 or len(after) == 0:
        return 0.0
    return abs(float(np.mean(after) - np.mean(before)))


def segment_phases(startup: RawStartup,
                   config: SegmentConfig = SegmentConfig()) -> PhaseBoundaries:
    """Automatic 4-phase segmentation of a captured startup.

    The capture starts at the onset, so phase 1 begins at index 0 and the three
    detected steps give the remaining boundaries; phase 4 runs to the end of
    the capture. Fewer than three steps flags the startup for expert override.
    """
    total = startup.total_current()
    steps = find_steps(total, config)
    n = startup.length
    usable = [s for s in steps
              if s >= config.min_segment_s and s <= n - config.min_segment_s]
    if len(usable) < 3:
        raise SegmentationFailed(
            f"found {len(usable)} usable steps, need 3 (startup {startup.id})")
    if len(usable) > 3:
        ranked = sorted(usable, key=lambda i: _step_magnitude(total, i, config),
                        reverse=True)[:3]
        usable = sorted(ranked)
    b1, b2, b3 = usable
    if b2 - b1 < config.min_segment_s or b3 - b2 < config.min_segment_s:
        raise SegmentationFailed(f"steps too close together in startup {startup.id}")
    return PhaseBoundaries(((0, b1), (b1, b2), (b2, b3), (b3, n)), source="auto")


def override_boundaries(startup: RawStartup,
                        segments: Sequence[Sequence[int]]) -> PhaseBoundaries:
    """Validate expert-supplied boundaries against the startup's capture."""
    bounds = PhaseBoundaries(tuple(tuple(seg) for seg in segments), source="expert")
    if bounds.segments[3][1] > startup.length:
        raise Invalid("boundaries extend past the captured window")
    return bounds


# ---- alignment --------------------------------------------------------------------


def resample_segment(values: np.ndarray, target: int) -> np.ndarray:
    """Bring one phase segment to its canonical length.

    Longer segments are linearly resampled (first/last values preserved);
    shorter ones are padded at the end with the segment's mean value.
    """
    n = len(values)
    if n < MIN_SEGMENT_SAMPLES:
        raise Invalid(f"degenerate segment of {n} samples")
    if n == target:
        return values.copy()
    if n > target:
        pos = np.linspace(0.0, n - 1.0, target)
        return np.interp(pos, np.arange(n), values)
    out = np.empty(target)
    out[:n] = values
    out[n:] = values.mean()
    return out


def align(startup: RawStartup, bounds: PhaseBoundaries,
          lengths: CanonicalLengths) -> AlignedStartup:
    if bounds.segments[3][1] > startup.length:
        raise Invalid("boundaries do not fit the captured window")
    rows = []
    for row in startup.matrix:
        parts = [resample_segment(row[s:e], lengths.lengths[p])
                 for p, (s, e) in enumerate(bounds.segments)]
        rows.append(np.concatenate(parts))
    return AlignedStartup(id=startup.id, channels=startup.channels,
                          matrix=np.array(rows), lengths=lengths, date=startup.date)


def canonical_from_corpus(bounds: Sequence[PhaseBoundaries]) -> CanonicalLengths:
    """Median duration of phases 1, 3, 4 across the corpus; phase 2 fixed at 95."""
    if not bounds:
        raise Invalid("empty corpus")
    durs = np.array([b.durations for b in bounds])
    med = [max(MIN_SEGMENT_SAMPLES, int(round(float(np.median(durs[:, p])))))
           for p in range(4)]
    med[1] = PHASE2_CANONICAL_SAMPLES
    return CanonicalLengths(tuple(med))


# ---- normalization -----------------------------------------------------------------


def fit_normalization(corpus: Sequence[AlignedStartup]) -> NormalizationParams:
    if not corpus:
        raise Invalid("cannot fit normalization on an empty corpus")
    channels = corpus[0].channels
    stacked = np.stack([a.matrix for a in corpus])  # n x channels x length
    mins = stacked.min(axis=(0, 2))
    maxs = stacked.max(axis=(0, 2))
    return NormalizationParams(channels, tuple(float(v) for v in mins),
                               tuple(float(v) for v in maxs))


def normalize(aligned: AlignedStartup, params: NormalizationParams) -> AlignedStartup:
    """Map into the training range: x -> (x - min) / (max - min), no clamping.

    A constant channel (max == min) maps to all zeros.
    """
    if aligned.channels != params.channels:
        raise Invalid("channel set does not match the normalization parameters")
    out = np.empty_like(aligned.matrix, dtype=float)
    for i, (lo, hi) in enumerate(zip(params.mins, params.maxs)):
        span = hi - lo
        out[i] = 0.0 if span <= 0 else (aligned.matrix[i] - lo) / span
    return replace(aligned, matrix=out)


def denormalize(aligned: AlignedStartup, params: NormalizationParams) -> AlignedStartup:
    if aligned.channels != params.channels:
        raise Invalid("channel set does not match the normalization parameters")
    out = np.empty_like(aligned.matrix, dtype=float)
    for i, (lo, hi) in enumerate(zip(params.mins, params.maxs)):
        out[i] = aligned.matrix[i] * (hi - lo) + lo
    return replace(aligned, matrix=out)


# ---- startup bundles ----------------------------------------------------------------


def startup_to_bundle(startup: RawStartup, bounds: Optional[PhaseBoundaries] = None,
                      provenance: Optional[dict] = None) -> dict:
    return {
        "id": startup.id,
        "date": startup.date,
        "onset_ts": to_iso(startup.onset_ts),
        "channels": list(startup.channels),
        "series": {ch: [float(v) for v in startup.matrix[i]]
                   for i, ch in enumerate(startup.channels)},
        "coverage": startup.coverage,
        "boundaries": bounds.to_dict() if bounds is not None else None,
        "provenance": provenance or {},
    }


def startup_from_bundle(doc: dict) -> tuple[RawStartup, Optional[PhaseBoundaries]]:
    channels = tuple(doc["channels"])
    matrix = np.array([doc["series"][ch] for ch in channels], dtype=float)
    startup = RawStartup(id=doc["id"], date=doc["date"],
                         onset_ts=from_iso(doc["onset_ts"]), channels=channels,
                         matrix=matrix, coverage=doc.get("coverage", 1.0))
    bounds = (PhaseBoundaries.from_dict(doc["boundaries"])
              if doc.get("boundaries") else None)
    return startup, bounds


class BundleStore:
    """Startup bundle files under <store root>/bundles, with an override audit log."""

    def __init__(self, root: str | Path):
        self.dir = Path(root) / "bundles"
        self.dir.mkdir(parents=True, exist_ok=True)
        self._audit = RecordLog(Path(root))
        self._lock = threading.Lock()

    def save(self, bundle: dict) -> None:
        path = self.dir / f"{bundle['id']}.json"
        with self._lock:
            path.write_text(json.dumps(bundle, sort_keys=True, indent=1),
                            encoding="utf-8")

    def load(self, startup_id: str) -> dict:
        path = self.dir / f"{startup_id}.json"
        if not path.is_file():
            raise NotFound(f"unknown startup {startup_id!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    def ids(self) -> list[str]:
        return sorted(p.stem for p in self.dir.glob("su-*.json"))

    def set_boundaries(self, startup_id: str, bounds: PhaseBoundaries) -> dict:
        """Persist new boundaries; expert overrides win and history is kept."""
        bundle = self.load(startup_id)
        startup, _ = startup_from_bundle(bundle)
        if bounds.segments[3][1] > startup.length:
            raise Invalid("boundaries extend past the captured window")
        bundle["boundaries"] = bounds.to_dict()
        self.save(bundle)
        self._audit.append("phase_overrides",
                           {"startup_id": startup_id, **bounds.to_dict()})
        return bundle

    def override_history(self, startup_id: str) -> list[dict]:
        return [r for r in self._audit.read("phase_overrides")
                if r["startup_id"] == startup_id]
