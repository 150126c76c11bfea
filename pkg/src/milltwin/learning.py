"""Knowledge generation over aligned startups: k-means clustering with elbow
k selection, per-cluster min/mean/max envelopes, and the expert-merged single
reference model used for live detection.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import date as date_type
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import Conflict, Invalid, NotFound
from .pipeline import AlignedStartup, CanonicalLengths, NormalizationParams

DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6

ASSIGNMENT_TABLE_HEADER = "fecha,grupo k-means"


@dataclass(frozen=True)
class FeatureMatrix:
    """n startups x d features; d = channels x total canonical length."""

    ids: tuple[str, ...]
    dates: tuple[str, ...]
    values: np.ndarray
    channels: tuple[str, ...]
    lengths: CanonicalLengths

    def __post_init__(self):
        n, d = self.values.shape
        if n != len(self.ids) or n != len(self.dates):
            raise Invalid("one row per startup id required")
        if d != len(self.channels) * self.lengths.total:
            raise Invalid("feature width must be channels x total canonical length")
        if np.isnan(self.values).any():
            raise Invalid("feature matrix must have no missing values")
        if self.values.min() < -1e-9 or self.values.max() > 1 + 1e-9:
            raise Invalid("training features must lie in [0, 1]; normalize first")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_aligned(cls, corpus: Sequence[AlignedStartup]) -> "FeatureMatrix":
        if not corpus:
            raise Invalid("empty corpus")
        ordered = sorted(corpus, key=lambda a: a.id)
        rows = np.stack([a.matrix.reshape(-1) for a in ordered])
        return cls(ids=tuple(a.id for a in ordered),
                   dates=tuple(a.date for a in ordered),
                   values=rows, channels=ordered[0].channels,
                   lengths=ordered[0].lengths)


@dataclass
class KMeansResult:
    labels: np.ndarray        # 0-based, length n
    centroids: np.ndarray     # k x d
    sse: float
    sse_history: list[float]  # per Lloyd iteration of the winning restart
    restarts: int


def _init_plus_plus(values: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted seeding: each next centroid drawn with prob ∝ D²."""
    n = values.shape[0]
    centroids = [values[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((values[:, None, :] - np.array(centroids)[None, :, :]) ** 2)
                    .sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centroids.append(values[idx])
    return np.array(centroids)


def _lloyd(values: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int, tol: float) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    centroids = _init_plus_plus(values, k, rng)
    prev_labels = None
    prev_sse = np.inf
    history: list[float] = []
    labels = np.zeros(len(values), dtype=int)
    for _ in range(max_iter):
        d2 = ((values[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        for c in range(k):
            if not (labels == c).any():
                # empty cluster: reseed to the farthest point and reassign
                far = d2[np.arange(len(values)), labels].argmax()
                centroids[c] = values[far]
                d2 = ((values[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
                labels = d2.argmin(axis=1)
        sse = float(d2[np.arange(len(values)), labels].sum())
        if np.isfinite(prev_sse):
            assert sse <= prev_sse * (1 + 1e-12) + 1e-12, \
                "SSE must not increase across Lloyd iterations"
        history.append(sse)
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        new_centroids = np.array([values[labels == c].mean(axis=0) for c in range(k)])
        shift = float(np.linalg.norm(new_centroids - centroids, axis=1).max())
        centroids = new_centroids
        prev_labels = labels
        prev_sse = sse
        if shift < tol:
            break
    # final sse against the final centroids
    d2 = ((values[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    sse = float(d2[np.arange(len(values)), labels].sum())
    history.append(sse)
    return labels, centroids, sse, history


def kmeans(values: np.ndarray, k: int, seed: int, restarts: int = DEFAULT_RESTARTS,
           max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> KMeansResult:
    """Lloyd iterations, squared Euclidean distance, best of `restarts` seedings.

    Restart r uses a generator seeded with seed + r, so results are reproducible
    and restarts could run in any order (winner picked by (sse, restart index)).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise Invalid("feature matrix must be 2-D")
    n = values.shape[0]
    if k < 1 or k > n:
        raise Invalid(f"k must be in [1, {n}], got {k}")
    best: tuple[float, int] | None = None
    best_out = None
    for r in range(max(1, restarts)):
        rng = np.random.default_rng(seed + r)
        labels, centroids, sse, history = _lloyd(values, k, rng, max_iter, tol)
        key = (sse, r)
        if best is None or key < best:
            best = key
            best_out = (labels, centroids, sse, history)
    labels, centroids, sse, history = best_out
    return KMeansResult(labels=labels, centroids=centroids, sse=sse,
                        sse_history=history, restarts=max(1, restarts))


@dataclass
class ElbowResult:
    k: int
    sse_curve: dict[int, float]


def choose_elbow_k(curve: Mapping[int, float]) -> int:
    """The k maximizing SSE(k-1) - 2*SSE(k) + SSE(k+1); ties go to smallest k."""
    ks = sorted(curve)
    candidates = [k for k in ks if k - 1 in curve and k + 1 in curve and k >= 2]
    if not candidates:
        return max(2, ks[-1]) if ks else 2
    best_k = candidates[0]
    best_gain = -np.inf
    for k in candidates:
        gain = curve[k - 1] - 2 * curve[k] + curve[k + 1]
        if gain > best_gain + 1e-12:
            best_gain = gain
            best_k = k
    return best_k


def elbow_select(values: np.ndarray, seed: int, kmax: int | None = None,
                 restarts: int = DEFAULT_RESTARTS) -> ElbowResult:
    """Pick k at the sharpest knee of the SSE-vs-k curve.

    The full curve is returned for display alongside the chosen k.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 3:
        raise Invalid("elbow selection needs at least 3 startups")
    if kmax is None:
        kmax = min(8, n - 1)
    kmax = max(2, min(kmax, n))
    curve = {k: kmeans(values, k, seed=seed, restarts=restarts).sse
             for k in range(1, kmax + 1)}
    return ElbowResult(k=min(choose_elbow_k(curve), kmax), sse_curve=curve)


# ---- envelopes and models -------------------------------------------------------


@dataclass(frozen=True)
class Envelope:
    lo: np.ndarray    # channels x length
    mean: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if not ((self.lo <= self.mean + 1e-12).all() and (self.mean <= self.hi + 1e-12).all()):
            raise Invalid("envelope must satisfy min <= mean <= max pointwise")


def pointwise_envelope(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """min/mean/max per index over a stack of traces."""
    rows = np.asarray(rows, dtype=float)
    if rows.size == 0:
        raise Invalid("cannot build an envelope from no traces")
    return rows.min(axis=0), rows.mean(axis=0), rows.max(axis=0)


def build_cluster_envelopes(matrix: FeatureMatrix,
                            labels: Mapping[str, int]) -> dict[int, Envelope]:
    """Pointwise min/mean/max per feature over each cluster's members."""
    clusters = sorted(set(labels.values()))
    shape = (len(matrix.channels), matrix.lengths.total)
    out: dict[int, Envelope] = {}
    for c in clusters:
        member_rows = [i for i, sid in enumerate(matrix.ids) if labels[sid] == c]
        if not member_rows:
            raise Invalid(f"cluster {c} has no members")
        lo, mean, hi = pointwise_envelope(matrix.values[member_rows])
        out[c] = Envelope(lo=lo.reshape(shape), mean=mean.reshape(shape),
                          hi=hi.reshape(shape))
    return out


@dataclass
class ClusterModel:
    k: int
    assignments: dict[str, int]          # startup id -> cluster 1..k
    dates: dict[str, str]                # startup id -> ISO date
    centroids: np.ndarray
    sse: float
    envelopes: dict[int, Envelope]
    seed: int
    restarts: int
    channels: tuple[str, ...]
    lengths: CanonicalLengths
    normalization: NormalizationParams
    sse_curve: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "assignments": self.assignments,
            "dates": self.dates,
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "sse": self.sse,
            "envelopes": {str(c): {"min": _rows(e.lo), "mean": _rows(e.mean),
                                   "max": _rows(e.hi)}
                          for c, e in self.envelopes.items()},
            "seed": self.seed,
            "restarts": self.restarts,
            "channels": list(self.channels),
            "lengths": self.lengths.to_dict(),
            "normalization": self.normalization.to_dict(),
            "sse_curve": {str(k): v for k, v in self.sse_curve.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        return cls(
            k=d["k"], assignments=dict(d["assignments"]), dates=dict(d["dates"]),
            centroids=np.array(d["centroids"], dtype=float), sse=d["sse"],
            envelopes={int(c): Envelope(np.array(e["min"]), np.array(e["mean"]),
                                        np.array(e["max"]))
                       for c, e in d["envelopes"].items()},
            seed=d["seed"], restarts=d["restarts"], channels=tuple(d["channels"]),
            lengths=CanonicalLengths.from_dict(d["lengths"]),
            normalization=NormalizationParams.from_dict(d["normalization"]),
            sse_curve={int(k): v for k, v in d.get("sse_curve", {}).items()},
        )


def train_cluster_model(matrix: FeatureMatrix, seed: int, k: int | None = None,
                        restarts: int = DEFAULT_RESTARTS,
                        normalization: NormalizationParams | None = None) -> ClusterModel:
    """Cluster the corpus; k=None selects k with the elbow rule."""
    if normalization is None:
        raise Invalid("normalization parameters are part of the model")
    sse_curve: dict[int, float] = {}
    if k is None:
        elbow = elbow_select(matrix.values, seed=seed, restarts=restarts)
        k = elbow.k
        sse_curve = elbow.sse_curve
    result = kmeans(matrix.values, k, seed=seed, restarts=restarts)
    assignments = {sid: int(lbl) + 1 for sid, lbl in zip(matrix.ids, result.labels)}
    dates = dict(zip(matrix.ids, matrix.dates))
    envelopes = build_cluster_envelopes(matrix, assignments)
    return ClusterModel(k=k, assignments=assignments, dates=dates,
                        centroids=result.centroids, sse=result.sse,
                        envelopes=envelopes, seed=seed, restarts=result.restarts,
                        channels=matrix.channels, lengths=matrix.lengths,
                        normalization=normalization, sse_curve=sse_curve)


@dataclass
class ReferenceModel:
    """Everything needed to judge a live startup, with expert curation applied."""

    version: int
    included_clusters: tuple[int, ...]
    lo: np.ndarray  # channels x length, dimensionless
    hi: np.ndarray
    margins: tuple[float, float, float, float]
    normalization: NormalizationParams
    lengths: CanonicalLengths
    channels: tuple[str, ...]
    labels: dict[int, str] = field(default_factory=dict)
    notes: str = ""
    created_by: str = "expert"

    def __post_init__(self):
        if (self.lo > self.hi + 1e-12).any():
            raise Invalid("reference band collapsed: lo must stay <= hi after margins")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "included_clusters": list(self.included_clusters),
            "lo": _rows(self.lo),
            "hi": _rows(self.hi),
            "margins": list(self.margins),
            "normalization": self.normalization.to_dict(),
            "lengths": self.lengths.to_dict(),
            "channels": list(self.channels),
            "labels": {str(c): t for c, t in self.labels.items()},
            "notes": self.notes,
            "created_by": self.created_by,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceModel":
        return cls(
            version=d["version"], included_clusters=tuple(d["included_clusters"]),
            lo=np.array(d["lo"], dtype=float), hi=np.array(d["hi"], dtype=float),
            margins=tuple(d["margins"]),
            normalization=NormalizationParams.from_dict(d["normalization"]),
            lengths=CanonicalLengths.from_dict(d["lengths"]),
            channels=tuple(d["channels"]),
            labels={int(c): t for c, t in d.get("labels", {}).items()},
            notes=d.get("notes", ""), created_by=d.get("created_by", "expert"),
        )


def merge_reference(model: ClusterModel, included: Sequence[int],
                    margins: Sequence[float] = (0.0, 0.0, 0.0, 0.0),
                    labels: Optional[Mapping[int, str]] = None, notes: str = "",
                    author: str = "expert", version: int = 1) -> ReferenceModel:
    """Compose the single reference envelope from the chosen cluster envelopes.

    lo = pointwise min of included cluster minima, widened down by the phase
    margin; hi symmetric with the maxima. Margins are additive slack per
    startup phase, default 0.
    """
    included = tuple(sorted(set(included)))
    if not included:
        raise Invalid("at least one cluster must be included")
    for c in included:
        if c not in model.envelopes:
            raise NotFound(f"cluster {c} not in model (clusters 1..{model.k})")
    if len(margins) != 4:
        raise Invalid("one margin per startup phase required")
    lo = np.min([model.envelopes[c].lo for c in included], axis=0)
    hi = np.max([model.envelopes[c].hi for c in included], axis=0)
    margin_per_index = np.array([margins[model.lengths.phase_of_index(i) - 1]
                                 for i in range(model.lengths.total)])
    lo = lo - margin_per_index[None, :]
    hi = hi + margin_per_index[None, :]
    return ReferenceModel(version=version, included_clusters=included, lo=lo, hi=hi,
                          margins=tuple(float(m) for m in margins),
                          normalization=model.normalization, lengths=model.lengths,
                          channels=model.channels,
                          labels=dict(labels or {}), notes=notes, created_by=author)


# ---- Table-2 style assignment table -----------------------------------------------


def record_assignments_table(model: ClusterModel) -> str:
    """Serialize assignments keyed by startup date, dd/mm/yyyy, ordered by date."""
    rows = sorted((model.dates[sid], sid) for sid in model.assignments)
    lines = [ASSIGNMENT_TABLE_HEADER]
    for iso_day, sid in rows:
        d = date_type.fromisoformat(iso_day)
        lines.append(f"{d.day:02d}/{d.month:02d}/{d.year:04d},{model.assignments[sid]}")
    return "\n".join(lines) + "\n"


def parse_assignments_table(text: str) -> dict[str, int]:
    """Inverse of record_assignments_table: ISO date -> cluster."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != ASSIGNMENT_TABLE_HEADER:
        raise Invalid("bad assignment table header")
    out: dict[str, int] = {}
    for ln in lines[1:]:
        fecha, grupo = ln.split(",")
        dd, mm, yyyy = (int(p) for p in fecha.split("/"))
        out[date_type(yyyy, mm, dd).isoformat()] = int(grupo)
    return out


# ---- model persistence ---------------------------------------------------------------


def _rows(a: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in a]


class ModelStore:
    """Versioned model files under <store root>/models; versions are immutable."""

    def __init__(self, root: str | Path):
        self.dir = Path(root) / "models"
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def save_cluster_model(self, model: ClusterModel) -> Path:
        path = self.dir / "cluster-model.json"
        path.write_text(json.dumps(model.to_dict(), sort_keys=True, indent=1),
                        encoding="utf-8")
        return path

    def load_cluster_model(self) -> ClusterModel:
        path = self.dir / "cluster-model.json"
        if not path.is_file():
            raise NotFound("no cluster model trained yet")
        return ClusterModel.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def next_version(self) -> int:
        return max(self.versions(), default=0) + 1

    def versions(self) -> list[int]:
        return sorted(int(p.stem.split("-v")[1]) for p in self.dir.glob("reference-v*.json"))

    def save_reference(self, model: ReferenceModel) -> Path:
        path = self.dir / f"reference-v{model.version}.json"
        with self._lock:
            if path.exists():
                raise Conflict(f"reference version {model.version} already exists")
            path.write_text(json.dumps(model.to_dict(), sort_keys=True, indent=1),
                            encoding="utf-8")
        return path

    def load_reference(self, version: int) -> ReferenceModel:
        path = self.dir / f"reference-v{version}.json"
        if not path.is_file():
            raise NotFound(f"unknown reference version {version}")
        return ReferenceModel.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def activate(self, version: int) -> None:
        self.load_reference(version)  # must exist
        (self.dir / "active.json").write_text(json.dumps({"version": version}),
                                              encoding="utf-8")

    def active_version(self) -> int | None:
        path = self.dir / "active.json"
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["version"]

    def active(self) -> ReferenceModel | None:
        v = self.active_version()
        return None if v is None else self.load_reference(v)
