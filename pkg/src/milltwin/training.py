"""Batch training orchestration: store -> startups -> aligned corpus -> models."""
from __future__ import annotations

import logging
from datetime import date, timedelta
from typing import Sequence

from .errors import Invalid, NotFound, SegmentationFailed
from .learning import ClusterModel, FeatureMatrix, ModelStore, train_cluster_model
from .pipeline import (BundleStore, CanonicalLengths, DetectConfig,
                       NormalizationParams, PhaseBoundaries, RawStartup,
                       SegmentConfig, align, canonical_from_corpus,
                       detect_startups, fit_normalization, normalize,
                       segment_phases, startup_from_bundle, startup_to_bundle,
                       CURRENT_CHANNEL_IDS)
from .store import TimeSeriesStore

log = logging.getLogger(__name__)


def days_between(first: str, last: str) -> list[str]:
    d0, d1 = date.fromisoformat(first), date.fromisoformat(last)
    if d1 < d0:
        raise Invalid("date range end before start")
    out = []
    d = d0
    while d <= d1:
        out.append(d.isoformat())
        d += timedelta(days=1)
    return out


def gather_startups(store: TimeSeriesStore, days: Sequence[str],
                    detect_cfg: DetectConfig = DetectConfig(),
                    segment_cfg: SegmentConfig = SegmentConfig(),
                    bundles: BundleStore | None = None,
                    channels: Sequence[str] = CURRENT_CHANNEL_IDS
                    ) -> list[tuple[RawStartup, PhaseBoundaries]]:
    """Detect and segment every startup in the given days.

    Previously stored expert boundaries take precedence over auto segmentation;
    startups whose auto segmentation fails are skipped with a warning (they
    stay available for expert override).
    """
    out: list[tuple[RawStartup, PhaseBoundaries]] = []
    for day in days:
        series = {ch: store.query_day(ch, date.fromisoformat(day)) for ch in channels}
        for raw in detect_startups(series, detect_cfg, channels):
            bounds: PhaseBoundaries | None = None
            if bundles is not None:
                try:
                    stored, stored_bounds = startup_from_bundle(bundles.load(raw.id))
                    if stored_bounds is not None and stored_bounds.source == "expert":
                        bounds = stored_bounds
                except NotFound:
                    pass
            if bounds is None:
                try:
                    bounds = segment_phases(raw, segment_cfg)
                except SegmentationFailed as exc:
                    log.warning("skipping %s: %s", raw.id, exc)
                    if bundles is not None:
                        bundles.save(startup_to_bundle(raw, None,
                                                       provenance={"source": "train",
                                                                   "error": str(exc)}))
                    continue
            if bundles is not None:
                bundles.save(startup_to_bundle(raw, bounds, provenance={"source": "train"}))
            out.append((raw, bounds))
    return out


def build_corpus(pairs: Sequence[tuple[RawStartup, PhaseBoundaries]]
                 ) -> tuple[CanonicalLengths, NormalizationParams, FeatureMatrix]:
    if not pairs:
        raise Invalid("no startups available to train on")
    lengths = canonical_from_corpus([b for _, b in pairs])
    aligned = [align(raw, bounds, lengths) for raw, bounds in pairs]
    params = fit_normalization(aligned)
    matrix = FeatureMatrix.from_aligned([normalize(a, params) for a in aligned])
    return lengths, params, matrix


def train_from_store(store: TimeSeriesStore, days: Sequence[str], seed: int,
                     k: int | None = None, restarts: int = 10,
                     detect_cfg: DetectConfig = DetectConfig(),
                     segment_cfg: SegmentConfig = SegmentConfig(),
                     bundles: BundleStore | None = None,
                     models: ModelStore | None = None) -> ClusterModel:
    """Full batch path: gather, align, normalize, cluster (elbow when k is None)."""
    pairs = gather_startups(store, days, detect_cfg, segment_cfg, bundles)
    _, params, matrix = build_corpus(pairs)
    model = train_cluster_model(matrix, seed=seed, k=k, restarts=restarts,
                                normalization=params)
    if models is not None:
        models.save_cluster_model(model)
    return model
