"""Digital-twin registry: assets, sensor channels, work orders, incidents, alerts.

Single logical writer (all mutations serialized by one lock); reads return
snapshots safe to share across request handlers. Records are persisted through
a RecordLog and replayed on restart.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from .errors import Conflict, Invalid, NotFound
from .store import RecordLog

MAX_GATEWAY_CHANNELS = 12


class AssetKind(str, Enum):
    machine = "machine"
    subsystem = "subsystem"
    sensor_point = "sensor-point"


class Quantity(str, Enum):
    current_phase_1 = "current_phase_1"
    current_phase_2 = "current_phase_2"
    current_phase_3 = "current_phase_3"
    temperature = "temperature"
    vibration_rms = "vibration_rms"


QUANTITY_UNITS = {
    Quantity.current_phase_1: "A",
    Quantity.current_phase_2: "A",
    Quantity.current_phase_3: "A",
    Quantity.temperature: "°C",
    Quantity.vibration_rms: "mm/s",
}


class IncidentSeverity(str, Enum):
    info = "info"
    warning = "warning"
    fault = "fault"


class AlertKind(str, Enum):
    envelope_violation = "envelope_violation"
    inactivity = "inactivity"
    ingest_gap = "ingest_gap"


class AlertSeverity(str, Enum):
    warning = "warning"
    critical = "critical"


@dataclass(frozen=True)
class AssetNode:
    id: str
    name: str
    kind: AssetKind
    parent: Optional[str] = None
    qr_code: Optional[str] = None


@dataclass(frozen=True)
class SensorChannel:
    id: str
    asset: str
    quantity: Quantity
    unit: str
    mode: str  # static | dynamic
    range: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.range
        if not lo < hi:
            raise Invalid(f"channel {self.id}: range lo must be < hi")
        if self.mode not in ("static", "dynamic"):
            raise Invalid(f"channel {self.id}: mode must be static or dynamic")
        expected = QUANTITY_UNITS[self.quantity]
        if self.unit != expected:
            raise Invalid(f"channel {self.id}: {self.quantity.value} must use unit {expected}")


@dataclass(frozen=True)
class WorkOrder:
    id: str
    material: str
    operation: str
    tool: str
    cad_code: str
    opened_at: int
    closed_at: Optional[int] = None
    status: str = "open"


@dataclass(frozen=True)
class Incident:
    id: str
    timestamp: int
    text: str
    severity: IncidentSeverity
    channel: Optional[str] = None


@dataclass(frozen=True)
class Alert:
    id: str
    raised_at: int
    kind: AlertKind
    severity: AlertSeverity
    channel: Optional[str] = None
    startup_phase: Optional[int] = None
    magnitude: float = 0.0
    acknowledged: bool = False
    acknowledged_by: Optional[str] = None


def _as_jsonable(obj) -> dict:
    d = asdict(obj)
    for k, v in d.items():
        if isinstance(v, Enum):
            d[k] = v.value
        elif isinstance(v, tuple):
            d[k] = list(v)
    return d


class TwinRegistry:
    """In-memory registry with serialized mutations and optional persistence."""

    def __init__(self, record_log: RecordLog | None = None,
                 on_event: Callable[[str, dict], None] | None = None):
        self._lock = threading.RLock()
        self._assets: dict[str, AssetNode] = {}
        self._channels: dict[str, SensorChannel] = {}
        self._work_orders: dict[str, WorkOrder] = {}
        self._incidents: dict[str, Incident] = {}
        self._alerts: dict[str, Alert] = {}
        self._counters = {"wo": 0, "inc": 0, "al": 0}
        self._log = record_log
        self._on_event = on_event
        if record_log is not None:
            self._replay(record_log)

    # ---- event / persistence plumbing -------------------------------------

    def set_event_sink(self, fn: Callable[[str, dict], None] | None) -> None:
        self._on_event = fn

    def _emit(self, kind: str, payload: dict) -> None:
        if self._on_event is not None:
            self._on_event(kind, payload)

    def _persist(self, kind: str, payload: dict) -> None:
        if self._log is not None:
            self._log.append(kind, payload)

    def _replay(self, log: RecordLog) -> None:
        sink, self._on_event = self._on_event, None
        persist, self._log = self._log, None
        try:
            for rec in log.read("workorders"):
                if rec["op"] == "open":
                    wo = self.open_work_order(rec["material"], rec["operation"],
                                              rec["tool"], rec["cad_code"], now=rec["opened_at"])
                    self._rename_work_order(wo.id, rec["id"])
                else:
                    self.close_work_order(rec["id"], now=rec["closed_at"])
            for rec in log.read("incidents"):
                inc = self.log_incident(rec["text"], IncidentSeverity(rec["severity"]),
                                        rec.get("channel"), now=rec["timestamp"],
                                        check_channel=False)
                self._rename_incident(inc.id, rec["id"])
            for rec in log.read("alerts"):
                if rec["op"] == "raise":
                    al = self.raise_alert(AlertKind(rec["kind"]), AlertSeverity(rec["severity"]),
                                          channel=rec.get("channel"),
                                          startup_phase=rec.get("startup_phase"),
                                          magnitude=rec.get("magnitude", 0.0),
                                          now=rec["raised_at"], check_channel=False)
                    self._rename_alert(al.id, rec["id"])
                else:
                    self.acknowledge_alert(rec["id"], rec["by"])
        finally:
            self._on_event = sink
            self._log = persist
        for key, prefix in (("wo", "wo"), ("inc", "inc"), ("al", "al")):
            ids = {"wo": self._work_orders, "inc": self._incidents, "al": self._alerts}[key]
            nums = [int(i.split("-")[1]) for i in ids if i.startswith(prefix + "-")]
            self._counters[key] = max(nums, default=0)

    def _rename_work_order(self, old: str, new: str) -> None:
        self._work_orders[new] = replace(self._work_orders.pop(old), id=new)

    def _rename_incident(self, old: str, new: str) -> None:
        self._incidents[new] = replace(self._incidents.pop(old), id=new)

    def _rename_alert(self, old: str, new: str) -> None:
        self._alerts[new] = replace(self._alerts.pop(old), id=new)

    def _next_id(self, key: str) -> str:
        self._counters[key] += 1
        return f"{key}-{self._counters[key]}"

    # ---- assets and channels ----------------------------------------------

    def register_asset(self, node: AssetNode) -> str:
        with self._lock:
            if node.id in self._assets:
                raise Conflict(f"asset id {node.id!r} already registered")
            if node.parent is not None and node.parent not in self._assets:
                raise NotFound(f"parent asset {node.parent!r} not registered")
            if node.qr_code is not None:
                for other in self._assets.values():
                    if other.qr_code == node.qr_code:
                        raise Conflict(f"qr_code {node.qr_code!r} already in use by {other.id!r}")
            self._assets[node.id] = node
            self._assert_forest()
            return node.id

    def _assert_forest(self) -> None:
        for start in self._assets:
            seen = set()
            node = start
            while node is not None:
                if node in seen:
                    raise Invalid(f"asset parent cycle through {node!r}")
                seen.add(node)
                node = self._assets[node].parent

    def register_channel(self, channel: SensorChannel) -> str:
        with self._lock:
            if channel.id in self._channels:
                raise Conflict(f"channel id {channel.id!r} already registered")
            if channel.asset not in self._assets:
                raise NotFound(f"asset {channel.asset!r} not registered")
            if len(self._channels) >= MAX_GATEWAY_CHANNELS:
                raise Invalid(f"gateway binding is limited to {MAX_GATEWAY_CHANNELS} channels")
            self._channels[channel.id] = channel
            return channel.id

    def asset(self, asset_id: str) -> AssetNode:
        node = self._assets.get(asset_id)
        if node is None:
            raise NotFound(f"unknown asset {asset_id!r}")
        return node

    def assets(self) -> list[AssetNode]:
        with self._lock:
            return list(self._assets.values())

    def children(self, asset_id: str) -> list[AssetNode]:
        with self._lock:
            return [a for a in self._assets.values() if a.parent == asset_id]

    def resolve_qr(self, code: str) -> AssetNode:
        with self._lock:
            for node in self._assets.values():
                if node.qr_code == code:
                    return node
        raise NotFound(f"no asset with qr code {code!r}")

    def channel(self, channel_id: str) -> SensorChannel:
        ch = self._channels.get(channel_id)
        if ch is None:
            raise NotFound(f"unknown channel {channel_id!r}")
        return ch

    def sensor_channels(self) -> list[SensorChannel]:
        with self._lock:
            return list(self._channels.values())

    def channels_for_asset(self, asset_id: str) -> list[SensorChannel]:
        with self._lock:
            return [c for c in self._channels.values() if c.asset == asset_id]

    # ---- work orders --------------------------------------------------------

    def open_work_order(self, material: str, operation: str, tool: str,
                        cad_code: str, now: int | None = None) -> WorkOrder:
        now = int(time.time()) if now is None else now
        with self._lock:
            current = self.open_order()
            if current is not None:
                raise Conflict(f"work order {current.id} is still open")
            wo = WorkOrder(self._next_id("wo"), material, operation, tool, cad_code, opened_at=now)
            self._work_orders[wo.id] = wo
            self._persist("workorders", {"op": "open", **_as_jsonable(wo)})
            self._emit("workorder_opened", _as_jsonable(wo))
            return wo

    def close_work_order(self, order_id: str, now: int | None = None) -> WorkOrder:
        now = int(time.time()) if now is None else now
        with self._lock:
            wo = self._work_orders.get(order_id)
            if wo is None:
                raise NotFound(f"unknown work order {order_id!r}")
            if wo.status == "closed":
                raise Conflict(f"work order {order_id} already closed")
            if now < wo.opened_at:
                raise Invalid("closed_at before opened_at")
            wo = replace(wo, closed_at=now, status="closed")
            self._work_orders[order_id] = wo
            self._persist("workorders", {"op": "close", "id": order_id, "closed_at": now})
            self._emit("workorder_closed", _as_jsonable(wo))
            return wo

    def open_order(self) -> WorkOrder | None:
        return next((w for w in self._work_orders.values() if w.status == "open"), None)

    def work_orders(self) -> list[WorkOrder]:
        with self._lock:
            return sorted(self._work_orders.values(), key=lambda w: w.opened_at)

    def work_order(self, order_id: str) -> WorkOrder:
        wo = self._work_orders.get(order_id)
        if wo is None:
            raise NotFound(f"unknown work order {order_id!r}")
        return wo

    # ---- incidents ----------------------------------------------------------

    def log_incident(self, text: str, severity: IncidentSeverity,
                     channel: str | None = None, now: int | None = None,
                     check_channel: bool = True) -> Incident:
        now = int(time.time()) if now is None else now
        if not text or not text.strip():
            raise Invalid("incident text must be non-empty")
        with self._lock:
            if channel is not None and check_channel:
                self.channel(channel)
            inc = Incident(self._next_id("inc"), now, text, severity, channel)
            self._incidents[inc.id] = inc
            self._persist("incidents", _as_jsonable(inc))
            self._emit("incident", _as_jsonable(inc))
            return inc

    def incidents(self) -> list[Incident]:
        with self._lock:
            return sorted(self._incidents.values(), key=lambda i: i.timestamp)

    # ---- alerts ---------------------------------------------------------------

    def raise_alert(self, kind: AlertKind, severity: AlertSeverity,
                    channel: str | None = None, startup_phase: int | None = None,
                    magnitude: float = 0.0, now: int | None = None,
                    check_channel: bool = True) -> Alert:
        now = int(time.time()) if now is None else now
        if startup_phase is not None and startup_phase not in (1, 2, 3, 4):
            raise Invalid("startup_phase must be 1..4")
        with self._lock:
            if channel is not None and check_channel:
                self.channel(channel)
            alert = Alert(self._next_id("al"), now, kind, severity, channel,
                          startup_phase, magnitude)
            self._alerts[alert.id] = alert
            self._persist("alerts", {"op": "raise", **_as_jsonable(alert)})
            self._emit("alert", _as_jsonable(alert))
            return alert

    def acknowledge_alert(self, alert_id: str, operator: str) -> Alert:
        if not operator or not operator.strip():
            raise Invalid("operator name required to acknowledge")
        with self._lock:
            alert = self._alerts.get(alert_id)
            if alert is None:
                raise NotFound(f"unknown alert {alert_id!r}")
            if alert.acknowledged:
                raise Conflict(f"alert {alert_id} already acknowledged")
            alert = replace(alert, acknowledged=True, acknowledged_by=operator)
            self._alerts[alert_id] = alert
            self._persist("alerts", {"op": "ack", "id": alert_id, "by": operator})
            self._emit("alert_ack", _as_jsonable(alert))
            return alert

    def alerts(self, active_only: bool = False) -> list[Alert]:
        with self._lock:
            out = [a for a in self._alerts.values() if not (active_only and a.acknowledged)]
            return sorted(out, key=lambda a: (a.raised_at, a.id))

    def alert(self, alert_id: str) -> Alert:
        a = self._alerts.get(alert_id)
        if a is None:
            raise NotFound(f"unknown alert {alert_id!r}")
        return a


def load_twin_config(path: str | Path, registry: TwinRegistry) -> None:
    """Load the declarative twin configuration (assets + channels) at service start.

    Schema: {"assets": [{id,name,kind,parent?,qr_code?}, ...],
             "channels": [{id,asset,quantity,unit,mode,range:[lo,hi]}, ...]}
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    apply_twin_config(doc, registry)


def apply_twin_config(doc: dict, registry: TwinRegistry) -> None:
    for raw in doc.get("assets", []):
        registry.register_asset(AssetNode(
            id=raw["id"], name=raw["name"], kind=AssetKind(raw["kind"]),
            parent=raw.get("parent"), qr_code=raw.get("qr_code")))
    for raw in doc.get("channels", []):
        registry.register_channel(SensorChannel(
            id=raw["id"], asset=raw["asset"], quantity=Quantity(raw["quantity"]),
            unit=raw["unit"], mode=raw.get("mode", "static"),
            range=tuple(raw["range"])))


def default_twin_config() -> dict:
    """Built-in CF-20 twin: machine, spindle head, electrical cabinet, 5 channels."""
    return {
        "assets": [
            {"id": "cf20", "name": "Fresadora CF-20", "kind": "machine", "qr_code": "QR-00"},
            {"id": "spindle-head", "name": "Cabezal del mandrino", "kind": "subsystem",
             "parent": "cf20", "qr_code": "QR-01"},
            {"id": "cabinet", "name": "Cuadro eléctrico", "kind": "subsystem",
             "parent": "cf20", "qr_code": "QR-02"},
        ],
        "channels": [
            {"id": "cur-l1", "asset": "cabinet", "quantity": "current_phase_1",
             "unit": "A", "mode": "static", "range": [0, 50]},
            {"id": "cur-l2", "asset": "cabinet", "quantity": "current_phase_2",
             "unit": "A", "mode": "static", "range": [0, 50]},
            {"id": "cur-l3", "asset": "cabinet", "quantity": "current_phase_3",
             "unit": "A", "mode": "static", "range": [0, 50]},
            {"id": "temp-spindle", "asset": "spindle-head", "quantity": "temperature",
             "unit": "°C", "mode": "static", "range": [0, 300]},
            {"id": "vib-spindle", "asset": "spindle-head", "quantity": "vibration_rms",
             "unit": "mm/s", "mode": "dynamic", "range": [0, 50]},
        ],
    }
