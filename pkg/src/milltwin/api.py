"""Cloud-twin application service: HTTP API over the registry, store, models
and detector, plus the server-push event stream the HMI subscribes to.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, RedirectResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel
from starlette.concurrency import run_in_threadpool

from .detector import DetectionPolicy, InactivityWatch, LiveMonitor
from .errors import Conflict, Invalid, NotFound, TwinError
from .events import EventBus
from .ingest import HttpGatewayClient, IngestService
from .learning import ModelStore, merge_reference, record_assignments_table
from .pipeline import (BundleStore, DetectConfig, SegmentConfig,
                       override_boundaries, startup_from_bundle)
from .store import RecordLog, TimeSeriesStore
from .timebase import Clock, parse_ts, to_iso
from .training import days_between, train_from_store
from .twin import (IncidentSeverity, TwinRegistry, apply_twin_config,
                   default_twin_config, load_twin_config)
from .twin import _as_jsonable as to_jsonable

log = logging.getLogger(__name__)


@dataclass
class ApiConfig:
    store_dir: Path
    host: str = "127.0.0.1"
    port: int = 8000
    gateway: Optional[str] = None          # gateway HTTP endpoint to ingest from
    twin_config: Optional[Path] = None     # assets/channels document; built-in CF-20 twin if absent
    hmi_dir: Optional[Path] = None         # static HMI assets
    poll_interval: float = 1.0


class TwinService:
    """Wires every subsystem together; the API layer only talks to this."""

    def __init__(self, config: ApiConfig, clock: Clock | None = None):
        self.config = config
        self.clock = clock or Clock()
        self.bus = EventBus()
        store_dir = Path(config.store_dir)
        self.records = RecordLog(store_dir)
        self.registry = TwinRegistry(record_log=self.records,
                                     on_event=self._registry_event)
        if config.twin_config:
            load_twin_config(config.twin_config, self.registry)
        else:
            apply_twin_config(default_twin_config(), self.registry)
        channel_ids = [c.id for c in self.registry.sensor_channels()]
        self.store = TimeSeriesStore(store_dir, channels=channel_ids)
        self.bundles = BundleStore(store_dir)
        self.models = ModelStore(store_dir)
        self.policy = DetectionPolicy()
        self.detect_cfg = DetectConfig()
        self.segment_cfg = SegmentConfig()
        self.current_channels = [c.id for c in self.registry.sensor_channels()
                                 if c.quantity.value.startswith("current_")][:3]
        self.ingest: IngestService | None = None
        if config.gateway:
            self.ingest = IngestService(
                HttpGatewayClient(config.gateway), self.store, channel_ids,
                registry=self.registry, clock=self.clock,
                interval_s=config.poll_interval, on_samples=self._publish_samples)
        self.monitor = LiveMonitor(
            self.store, self.registry, self.models.active, policy=self.policy,
            detect_cfg=self.detect_cfg, segment_cfg=self.segment_cfg,
            channels=self.current_channels, bundle_sink=self.bundles.save,
            on_event=self.bus.publish)
        self.watch = InactivityWatch(self.registry, on_event=self.bus.publish)
        self._watch_cursor: int | None = None
        self._stop = threading.Event()
        self._monitor_thread: threading.Thread | None = None

    # -- events ------------------------------------------------------------------

    def _registry_event(self, kind: str, payload: dict) -> None:
        self.bus.publish(kind, payload)

    def _publish_samples(self, channel: str, samples) -> None:
        if samples:
            latest = samples[-1]
            self.bus.publish("sample", {"channel": channel, "ts": to_iso(latest.ts),
                                        "value": latest.value})

    # -- background loops -----------------------------------------------------------

    def tick(self, now: int | None = None) -> None:
        """One monitoring pass: live detection plus the inactivity watch."""
        now = self.clock.now() if now is None else now
        self.monitor.poll(now)
        self._feed_inactivity(now)

    def _feed_inactivity(self, now: int) -> None:
        if len(self.current_channels) != 3:
            return
        start = now - 600 if self._watch_cursor is None else self._watch_cursor + 1
        cols = [{s.ts: s.value for s in self.store.query(ch, start, now)}
                for ch in self.current_channels]
        common = sorted(set(cols[0]) & set(cols[1]) & set(cols[2]))
        for ts in common:
            self.watch.observe(ts, sum(col[ts] for col in cols))
            self._watch_cursor = ts

    def _monitor_loop(self) -> None:
        while not self._stop.is_set():
            try:
                self.tick()
            except Exception:
                log.exception("monitor tick failed")
            self.clock.sleep(self.config.poll_interval)

    def start(self) -> "TwinService":
        if self.ingest is not None:
            self.ingest.start()
        self._monitor_thread = threading.Thread(target=self._monitor_loop, daemon=True)
        self._monitor_thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self.ingest is not None:
            self.ingest.stop()
        if self._monitor_thread is not None:
            self._monitor_thread.join(timeout=5)

    # -- model operations (single path shared by API and CLI) ---------------------------

    def train(self, seed: int, k: int | None, date_range: tuple[str, str] | None,
              restarts: int = 10) -> dict:
        days = (days_between(*date_range) if date_range
                else sorted(d.isoformat() for d in self.store.days(self.current_channels[0])))
        model = train_from_store(self.store, days, seed=seed, k=k, restarts=restarts,
                                 detect_cfg=self.detect_cfg, segment_cfg=self.segment_cfg,
                                 bundles=self.bundles, models=self.models)
        summary = {"k": model.k, "sse": model.sse, "seed": model.seed,
                   "startups": len(model.assignments),
                   "sse_curve": {str(kk): v for kk, v in sorted(model.sse_curve.items())},
                   "assignment_table": record_assignments_table(model)}
        self.bus.publish("model_trained", summary)
        return summary

    def merge(self, include: list[int], margins: tuple[float, float, float, float],
              labels: dict[int, str], notes: str, author: str) -> dict:
        model = self.models.load_cluster_model()
        version = self.models.next_version()
        ref = merge_reference(model, include, margins, labels=labels, notes=notes,
                              author=author, version=version)
        self.models.save_reference(ref)
        payload = {"version": version, "included_clusters": list(ref.included_clusters),
                   "margins": list(ref.margins), "created_by": author}
        self.bus.publish("reference_merged", payload)
        return payload

    def activate(self, version: int) -> dict:
        self.models.activate(version)
        payload = {"version": version}
        self.bus.publish("model_activated", payload)
        return payload


# ---- request bodies --------------------------------------------------------------------


class WorkOrderIn(BaseModel):
    material: str
    operation: str
    tool: str
    cad_code: str


class IncidentIn(BaseModel):
    text: str
    severity: str = "info"
    channel: Optional[str] = None


class AckIn(BaseModel):
    operator: str


class PhasesIn(BaseModel):
    segments: list[list[int]]


class TrainIn(BaseModel):
    seed: int = 0
    k: Optional[int] = None          # None -> elbow selection
    date_range: Optional[list[str]] = None
    restarts: int = 10


class MergeIn(BaseModel):
    include: list[int]
    margins: dict[str, float] = {}
    labels: dict[str, str] = {}
    notes: str = ""
    author: str = "expert"


def create_app(service: TwinService) -> FastAPI:
    app = FastAPI(title="milltwin", version="0.1.0")
    registry = service.registry

    @app.exception_handler(TwinError)
    async def twin_error_handler(_req: Request, exc: TwinError):
        status = 500
        if isinstance(exc, NotFound):
            status = 404
        elif isinstance(exc, Conflict):
            status = 409
        elif isinstance(exc, Invalid):
            status = 422
        return JSONResponse(status_code=status, content={"error": str(exc)})

    # -- assets / channels ------------------------------------------------------------

    @app.get("/api/assets")
    def list_assets():
        return {"assets": [to_jsonable(a) for a in registry.assets()]}

    @app.get("/api/assets/{asset_id}")
    def get_asset(asset_id: str):
        node = registry.asset(asset_id)
        return {"asset": to_jsonable(node),
                "children": [to_jsonable(c) for c in registry.children(asset_id)],
                "channels": [to_jsonable(c) for c in registry.channels_for_asset(asset_id)]}

    @app.get("/api/channels")
    def list_channels():
        return {"channels": [to_jsonable(c) for c in registry.sensor_channels()]}

    @app.get("/api/channels/{channel_id}/latest")
    def channel_latest(channel_id: str):
        ch = registry.channel(channel_id)
        latest = service.store.latest(channel_id)
        return {"channel": to_jsonable(ch),
                "sample": None if latest is None
                else {"ts": to_iso(latest.ts), "value": latest.value}}

    @app.get("/api/channels/{channel_id}/range")
    def channel_range(channel_id: str,
                      frm: str = Query(alias="from"),
                      to: str = Query()):
        registry.channel(channel_id)
        rows = service.store.query(channel_id, parse_ts(frm), parse_ts(to))
        return {"channel": channel_id,
                "samples": [{"ts": to_iso(s.ts), "value": s.value} for s in rows]}

    # -- work orders ---------------------------------------------------------------------

    @app.get("/api/workorders")
    def list_workorders():
        return {"workorders": [to_jsonable(w) for w in registry.work_orders()]}

    @app.post("/api/workorders")
    def open_workorder(body: WorkOrderIn):
        wo = registry.open_work_order(body.material, body.operation, body.tool,
                                      body.cad_code, now=service.clock.now())
        return to_jsonable(wo)

    @app.post("/api/workorders/{order_id}/close")
    def close_workorder(order_id: str):
        return to_jsonable(registry.close_work_order(order_id, now=service.clock.now()))

    # -- incidents ------------------------------------------------------------------------

    @app.get("/api/incidents")
    def list_incidents():
        return {"incidents": [to_jsonable(i) for i in registry.incidents()]}

    @app.post("/api/incidents")
    def log_incident(body: IncidentIn):
        try:
            severity = IncidentSeverity(body.severity)
        except ValueError:
            raise Invalid(f"unknown severity {body.severity!r}")
        inc = registry.log_incident(body.text, severity, body.channel,
                                    now=service.clock.now())
        return to_jsonable(inc)

    # -- alerts ----------------------------------------------------------------------------

    @app.get("/api/alerts")
    def list_alerts(active: bool = False):
        return {"alerts": [to_jsonable(a) for a in registry.alerts(active_only=active)]}

    @app.post("/api/alerts/{alert_id}/ack")
    def ack_alert(alert_id: str, body: AckIn):
        return to_jsonable(registry.acknowledge_alert(alert_id, body.operator))

    # -- startups ---------------------------------------------------------------------------

    @app.get("/api/startups")
    def list_startups():
        out = []
        for sid in service.bundles.ids():
            doc = service.bundles.load(sid)
            out.append({"id": doc["id"], "date": doc["date"],
                        "onset_ts": doc["onset_ts"], "coverage": doc.get("coverage"),
                        "boundaries": doc.get("boundaries"),
                        "verdict": (doc.get("verdict") or {}).get("classification")})
        return {"startups": out}

    @app.get("/api/startups/{startup_id}/bundle")
    def get_bundle(startup_id: str):
        return service.bundles.load(startup_id)

    @app.get("/api/startups/{startup_id}/view")
    def startup_view(startup_id: str, model: Optional[int] = None):
        """Display bundle for the explorer: normalized trace, reference band,
        phase slices and the verdict, all computed server-side."""
        from .detector import evaluate_startup
        from .pipeline import align, normalize, segment_phases

        ref = (service.models.load_reference(model) if model is not None
               else service.models.active())
        if ref is None:
            raise NotFound("no active reference model; train and merge first")
        raw, bounds = startup_from_bundle(service.bundles.load(startup_id))
        if bounds is None:
            bounds = segment_phases(raw, service.segment_cfg)
        normed = normalize(align(raw, bounds, ref.lengths), ref.normalization)
        verdict = evaluate_startup(normed, ref, service.policy)
        lengths = ref.lengths.lengths
        phases = []
        acc = 0
        for n in lengths:
            phases.append([acc, acc + n])
            acc += n
        return {"id": startup_id, "model_version": ref.version,
                "channels": list(ref.channels), "phases": phases,
                "trace": [[float(v) for v in row] for row in normed.matrix],
                "lo": [[float(v) for v in row] for row in ref.lo],
                "hi": [[float(v) for v in row] for row in ref.hi],
                "verdict": verdict.to_dict()}

    @app.post("/api/startups/{startup_id}/phases")
    def set_phases(startup_id: str, body: PhasesIn):
        raw, _ = startup_from_bundle(service.bundles.load(startup_id))
        bounds = override_boundaries(raw, body.segments)
        service.bundles.set_boundaries(startup_id, bounds)
        payload = {"startup_id": startup_id, **bounds.to_dict()}
        service.bus.publish("phases_overridden", payload)
        return payload

    # -- models --------------------------------------------------------------------------------

    @app.get("/api/models")
    def list_models():
        active = service.models.active_version()
        refs = []
        for v in service.models.versions():
            ref = service.models.load_reference(v)
            refs.append({"version": v, "active": v == active,
                         "included_clusters": list(ref.included_clusters),
                         "margins": list(ref.margins),
                         "labels": {str(c): t for c, t in ref.labels.items()},
                         "notes": ref.notes, "created_by": ref.created_by})
        try:
            cm = service.models.load_cluster_model()
            cluster = {"k": cm.k, "sse": cm.sse, "seed": cm.seed,
                       "startups": len(cm.assignments),
                       "sse_curve": {str(k): v for k, v in sorted(cm.sse_curve.items())},
                       "labels": {},
                       "assignment_table": record_assignments_table(cm)}
        except NotFound:
            cluster = None
        return {"cluster_model": cluster, "references": refs, "active_version": active}

    @app.get("/api/models/{version}")
    def get_model(version: int):
        return service.models.load_reference(version).to_dict()

    @app.post("/api/models/train")
    def train(body: TrainIn):
        date_range = tuple(body.date_range) if body.date_range else None
        if date_range is not None and len(date_range) != 2:
            raise Invalid("date_range must be [first, last]")
        return service.train(body.seed, body.k, date_range, body.restarts)

    @app.post("/api/models/merge")
    def merge(body: MergeIn):
        margins = [0.0] * 4
        for key, val in body.margins.items():
            idx = int(key.removeprefix("phase")) - 1
            if not 0 <= idx < 4:
                raise Invalid(f"unknown phase {key!r}")
            margins[idx] = float(val)
        labels = {int(c): t for c, t in body.labels.items()}
        return service.merge(body.include, tuple(margins), labels,
                             body.notes, body.author)

    @app.post("/api/models/{version}/activate")
    def activate(version: int):
        return service.activate(version)

    # -- QR asset view ----------------------------------------------------------------------

    @app.get("/api/qr/{code}")
    def qr_view(code: str):
        node = registry.resolve_qr(code)
        subtree = [node] + registry.children(node.id)
        channels = []
        for asset in subtree:
            for ch in registry.channels_for_asset(asset.id):
                latest = service.store.latest(ch.id)
                channels.append({"channel": to_jsonable(ch),
                                 "latest": None if latest is None
                                 else {"ts": to_iso(latest.ts), "value": latest.value}})
        return {"asset": to_jsonable(node),
                "children": [to_jsonable(c) for c in registry.children(node.id)],
                "indicators": channels,
                "active_alerts": [to_jsonable(a) for a in registry.alerts(active_only=True)]}

    # -- health / events --------------------------------------------------------------------

    @app.get("/api/health")
    def health():
        ingest_degraded = service.ingest.degraded if service.ingest else False
        degraded = ingest_degraded or service.monitor.degraded
        return {"status": "degraded" if degraded else "ok",
                "ingest": {"configured": service.ingest is not None,
                           "degraded": ingest_degraded},
                "monitor": {"degraded": service.monitor.degraded,
                            "active_model": service.models.active_version()},
                "subscribers": service.bus.subscriber_count}

    @app.get("/api/events")
    async def events(request: Request):
        sub = service.bus.subscribe()

        async def stream():
            try:
                yield ": connected\n\n"
                while True:
                    if await request.is_disconnected():
                        return
                    ev = await run_in_threadpool(sub.get, 1.0)
                    yield ev.sse() if ev is not None else ": heartbeat\n\n"
            finally:
                sub.close()

        return StreamingResponse(stream(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    # -- static HMI -----------------------------------------------------------------------------

    hmi = service.config.hmi_dir
    if hmi and Path(hmi).is_dir():
        app.mount("/ui", StaticFiles(directory=hmi, html=True), name="hmi")

        @app.get("/")
        def index():
            return RedirectResponse("/ui/")

    return app


def serve(config: ApiConfig) -> None:
    import uvicorn

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    service = TwinService(config).start()
    app = create_app(service)
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    finally:
        service.stop()
