"""End-to-end demonstration scenario: 19 historical training startups drawn
from 4 machine-behavior archetypes, plus 8 held-out startups (4 clean,
4 with injected current spikes). Simulates, ingests, trains with elbow
selection, merges an expert reference, and evaluates the held-out days.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from .detector import DetectionPolicy, alert_payloads, evaluate_startup
from .gateway import AnomalySpec, GatewaySimulator, StartupProfile, simulate_day
from .ingest import IngestService, InProcessGatewayClient
from .learning import (FeatureMatrix, ModelStore, merge_reference,
                       record_assignments_table, train_cluster_model)
from .pipeline import (BundleStore, DetectConfig, SegmentConfig, align,
                       canonical_from_corpus, detect_startups,
                       fit_normalization, normalize, segment_phases,
                       startup_to_bundle)
from .store import TimeSeriesStore
from .timebase import ManualClock

ONSET_TIME = (8, 6, 0)  # startups logged at the beginning of the working day

# scenario fixture: training day -> behavior archetype (1..4), 5/5/5/4 split
TRAINING_PATTERN: tuple[tuple[str, int], ...] = (
    ("2020-01-13", 2), ("2020-01-16", 1), ("2020-01-17", 3), ("2020-01-21", 3),
    ("2020-01-22", 1), ("2020-01-24", 4), ("2020-01-27", 3), ("2020-01-29", 4),
    ("2020-01-30", 4), ("2020-01-31", 2), ("2020-02-03", 2), ("2020-02-04", 2),
    ("2020-02-05", 1), ("2020-02-06", 2), ("2020-02-07", 1), ("2020-02-10", 1),
    ("2020-02-11", 4), ("2020-02-13", 3), ("2020-02-14", 3),
)

CLEAN_VALIDATION_DAYS = ("2020-03-06", "2020-03-11", "2020-03-12", "2020-03-24")

# held-out anomalous days: spikes well inside a phase, > 5 s
ANOMALOUS_VALIDATION: tuple[tuple[str, AnomalySpec], ...] = (
    ("2020-03-25", AnomalySpec("spike", target_phase=2, onset_offset=40,
                               magnitude=3.0, duration=8)),
    ("2020-03-26", AnomalySpec("spike", target_phase=3, onset_offset=12,
                               magnitude=6.0, duration=8)),
    ("2020-03-27", AnomalySpec("spike", target_phase=4, onset_offset=20,
                               magnitude=3.5, duration=8)),
    ("2020-03-30", AnomalySpec("spike", target_phase=3, onset_offset=10,
                               magnitude=6.5, duration=8)),
)

EXPERT_MARGINS = (0.03, 0.03, 0.03, 0.03)
CLUSTER_LABELS = {1: "arranque frío", 2: "arranque templado",
                  3: "carga larga", 4: "arranque rápido"}


def base_profile(noise_sigma: float = 0.05) -> StartupProfile:
    """Archetype 1; idle and early-phase levels follow the recorded HMI table."""
    return StartupProfile(
        phase_durations=(20, 95, 30, 60),
        phase_levels=((2.15, 1.75, 2.63),
                      (3.81, 3.51, 3.81),
                      (8.60, 8.30, 8.65),
                      (6.20, 6.00, 6.30)),
        idle_levels=(0.68, 0.09, 0.58),
        ramp_seconds=2.0,
        noise_sigma=noise_sigma,
    )


# per-archetype level offsets (A) for (phase 1, phase 3, phase 4), applied to
# all three lines. Tetrahedron coordinates rescaled by phase length so the four
# behaviors are roughly equidistant in the aligned feature space: long phases
# (the warm-up dominates the capture window) need smaller per-sample deltas.
ARCHETYPE_OFFSETS = {
    1: (0.0, 0.0, 0.0),
    2: (4.9, 0.0, 0.0),
    3: (2.46, 3.46, 0.0),
    4: (2.46, 1.16, 0.84),
}


def archetype_profile(archetype: int, noise_sigma: float = 0.05) -> StartupProfile:
    """Four distinct startup behaviors, separated across phases 1, 3 and 4."""
    base = base_profile(noise_sigma)
    d1, d3, d4 = ARCHETYPE_OFFSETS[archetype]
    levels = [list(lv) for lv in base.phase_levels]
    levels[0] = [v + d1 for v in levels[0]]
    levels[2] = [v + d3 for v in levels[2]]
    levels[3] = [v + d4 for v in levels[3]]
    return StartupProfile(
        phase_durations=base.phase_durations,
        phase_levels=tuple(tuple(lv) for lv in levels),
        idle_levels=base.idle_levels,
        ramp_seconds=base.ramp_seconds,
        noise_sigma=noise_sigma,
    )


def _onset_ts(day: str) -> int:
    d = date.fromisoformat(day)
    return int(datetime(d.year, d.month, d.day, *ONSET_TIME,
                        tzinfo=timezone.utc).timestamp())


@dataclass
class DemoReport:
    seed: int
    k: int
    sse_curve: dict[int, float]
    assignment_table: str
    archetype_truth: dict[str, int]       # startup id -> generating archetype
    predicted: dict[str, int]             # startup id -> cluster label
    containment_fraction: float
    reference_versions: list[int]
    active_version: int
    validation: list[dict]
    store_root: str

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "k": self.k,
            "sse_curve": {str(k): v for k, v in sorted(self.sse_curve.items())},
            "assignment_table": self.assignment_table,
            "archetype_truth": self.archetype_truth,
            "predicted": self.predicted,
            "containment_fraction": self.containment_fraction,
            "reference_versions": self.reference_versions,
            "active_version": self.active_version,
            "validation": self.validation,
        }

    def text(self) -> str:
        lines = [
            f"demo seed={self.seed}",
            f"elbow-selected k: {self.k}",
            "sse curve: " + ", ".join(f"k={k}:{v:.4f}" for k, v in sorted(self.sse_curve.items())),
            "",
            "cluster assignments:",
            self.assignment_table.rstrip("\n"),
            "",
            f"training containment (all clusters, margins 0): {self.containment_fraction:.4f}",
            f"reference versions: {self.reference_versions} (active v{self.active_version})",
            "",
            "validation:",
        ]
        for v in self.validation:
            alerts = "; ".join(
                f"phase {a['startup_phase']} {a['severity']} excess {a['magnitude']:.3f}"
                for a in v["alerts"]) or "none"
            lines.append(f"  {v['date']} [{v['expected']}] -> {v['classification']}"
                         f" | alerts: {alerts}")
        return "\n".join(lines) + "\n"


def _simulate_and_ingest(store: TimeSeriesStore, seed: int,
                         noise_sigma: float, jitter_range_s: int):
    """Build every scenario day on the simulator and pull it through the ingest path."""
    clock = ManualClock(0)
    sim = GatewaySimulator(clock=clock)
    rng = np.random.default_rng(seed)
    day_plan: list[tuple[str, int, AnomalySpec | None]] = []
    truth: dict[str, int] = {}
    for day, archetype in TRAINING_PATTERN:
        day_plan.append((day, archetype, None))
    for day in CLEAN_VALIDATION_DAYS:
        day_plan.append((day, 1, None))
    for day, anomaly in ANOMALOUS_VALIDATION:
        day_plan.append((day, 1, anomaly))

    last_ts = 0
    for i, (day, archetype, anomaly) in enumerate(day_plan):
        jitter = int(rng.integers(-jitter_range_s, jitter_range_s + 1))
        profile = archetype_profile(archetype, noise_sigma)
        synth = simulate_day(profile, _onset_ts(day), anomaly=anomaly,
                             seed=seed + 1000 * i, phase2_jitter=jitter,
                             lead_in_s=30, run_s=500, idle_tail_s=120)
        sim.feed_startup(synth)
        truth[day] = archetype
        last_ts = max(last_ts, synth.start_ts + len(synth.series["temperature"]))

    clock.set(last_ts + 1)
    service = IngestService(InProcessGatewayClient(sim), store,
                            channels=[c.id for c in sim.channel_list], clock=clock)
    service.step()
    return truth


def _collect_startups(store: TimeSeriesStore, days, detect_cfg: DetectConfig,
                      segment_cfg: SegmentConfig):
    collected = []
    for day in days:
        series = {ch: store.query_day(ch, date.fromisoformat(day))
                  for ch in ("cur-l1", "cur-l2", "cur-l3")}
        found = detect_startups(series, detect_cfg)
        if len(found) != 1:
            raise RuntimeError(f"expected 1 startup on {day}, found {len(found)}")
        raw = found[0]
        bounds = segment_phases(raw, segment_cfg)
        collected.append((raw, bounds))
    return collected


def run_demo(seed: int = 42, out_dir: str | Path = "demo-out",
             noise_sigma: float = 0.05, jitter_range_s: int = 10,
             policy: DetectionPolicy = DetectionPolicy()) -> DemoReport:
    out = Path(out_dir)
    store = TimeSeriesStore(out / "store",
                            channels=["cur-l1", "cur-l2", "cur-l3",
                                      "temp-spindle", "vib-spindle"])
    detect_cfg = DetectConfig()
    segment_cfg = SegmentConfig()

    day_truth = _simulate_and_ingest(store, seed, noise_sigma, jitter_range_s)

    # training corpus
    training_days = [day for day, _ in TRAINING_PATTERN]
    train_set = _collect_startups(store, training_days, detect_cfg, segment_cfg)
    lengths = canonical_from_corpus([b for _, b in train_set])
    aligned = [align(raw, bounds, lengths) for raw, bounds in train_set]
    norm_params = fit_normalization(aligned)
    normalized = [normalize(a, norm_params) for a in aligned]
    matrix = FeatureMatrix.from_aligned(normalized)

    bundles = BundleStore(out / "store")
    for raw, bounds in train_set:
        bundles.save(startup_to_bundle(raw, bounds, provenance={"source": "demo"}))

    model = train_cluster_model(matrix, seed=seed, normalization=norm_params)
    models = ModelStore(out / "store")
    models.save_cluster_model(model)

    reference_v1 = merge_reference(model, included=sorted(model.envelopes),
                                   margins=(0.0, 0.0, 0.0, 0.0),
                                   labels=CLUSTER_LABELS, author="demo", version=1)
    models.save_reference(reference_v1)
    contained = [
        ((a.matrix >= reference_v1.lo - 1e-12) & (a.matrix <= reference_v1.hi + 1e-12)).mean()
        for a in normalized
    ]
    containment = float(np.mean(contained))

    reference_v2 = merge_reference(model, included=sorted(model.envelopes),
                                   margins=EXPERT_MARGINS, labels=CLUSTER_LABELS,
                                   notes="supervised widening after HMI review",
                                   author="demo-expert", version=2)
    models.save_reference(reference_v2)
    models.activate(2)

    # held-out evaluation against the active (expert) reference
    validation: list[dict] = []
    expected_phase = {day: spec.target_phase for day, spec in ANOMALOUS_VALIDATION}
    val_days = list(CLEAN_VALIDATION_DAYS) + [d for d, _ in ANOMALOUS_VALIDATION]
    for day in val_days:
        raw, bounds = _collect_startups(store, [day], detect_cfg, segment_cfg)[0]
        bundles.save(startup_to_bundle(raw, bounds, provenance={"source": "demo-validation"}))
        a = normalize(align(raw, bounds, lengths), norm_params)
        verdict = evaluate_startup(a, reference_v2, policy)
        alerts = alert_payloads(verdict, policy)
        validation.append({
            "id": raw.id,
            "date": day,
            "expected": "anomalous" if day in expected_phase else "clean",
            "expected_phase": expected_phase.get(day),
            "classification": verdict.classification,
            "alerts": [{"kind": p["kind"].value, "severity": p["severity"].value,
                        "channel": p["channel"], "startup_phase": p["startup_phase"],
                        "magnitude": round(p["magnitude"], 6)} for p in alerts],
        })

    truth_by_id = {raw.id: day_truth[raw.date] for raw, _ in train_set}
    report = DemoReport(
        seed=seed, k=model.k, sse_curve=dict(model.sse_curve),
        assignment_table=record_assignments_table(model),
        archetype_truth=truth_by_id,
        predicted=dict(model.assignments),
        containment_fraction=containment,
        reference_versions=models.versions(),
        active_version=models.active_version() or 0,
        validation=validation,
        store_root=str(out / "store"),
    )
    (out / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
    return report
