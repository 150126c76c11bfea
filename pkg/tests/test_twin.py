import pytest

from milltwin.errors import Conflict, Invalid, NotFound
from milltwin.store import RecordLog
from milltwin.twin import (AlertKind, AlertSeverity, AssetKind, AssetNode,
                           IncidentSeverity, Quantity, SensorChannel,
                           TwinRegistry, apply_twin_config, default_twin_config)


def machine(node_id="cf20", qr=None):
    return AssetNode(node_id, "Fresadora CF-20", AssetKind.machine, qr_code=qr)


def channel(cid="cur-l1", asset="cf20", quantity=Quantity.current_phase_1, unit="A"):
    return SensorChannel(cid, asset, quantity, unit, "static", (0.0, 50.0))


@pytest.fixture
def registry():
    reg = TwinRegistry()
    reg.register_asset(machine())
    return reg


class TestAssets:
    def test_register_root_machine(self, registry):
        assert registry.asset("cf20").name == "Fresadora CF-20"
        assert [a.id for a in registry.assets()] == ["cf20"]

    def test_child_with_parent_chain(self, registry):
        registry.register_asset(AssetNode("spindle-head", "Cabezal",
                                          AssetKind.subsystem, parent="cf20"))
        assert registry.children("cf20")[0].id == "spindle-head"

    def test_duplicate_id(self, registry):
        with pytest.raises(Conflict):
            registry.register_asset(machine())

    def test_missing_parent(self, registry):
        with pytest.raises(NotFound):
            registry.register_asset(AssetNode("x", "x", AssetKind.subsystem,
                                              parent="ghost"))

    def test_duplicate_qr_code(self, registry):
        registry.register_asset(AssetNode("a", "a", AssetKind.subsystem,
                                          parent="cf20", qr_code="QR-01"))
        with pytest.raises(Conflict):
            registry.register_asset(AssetNode("b", "b", AssetKind.subsystem,
                                              parent="cf20", qr_code="QR-01"))

    def test_qr_resolution(self, registry):
        registry.register_asset(AssetNode("a", "a", AssetKind.subsystem,
                                          parent="cf20", qr_code="QR-01"))
        assert registry.resolve_qr("QR-01").id == "a"
        with pytest.raises(NotFound):
            registry.resolve_qr("QR-99")


class TestChannels:
    def test_register_and_lookup(self, registry):
        registry.register_channel(channel())
        assert registry.channel("cur-l1").quantity is Quantity.current_phase_1

    def test_unit_must_match_quantity(self):
        with pytest.raises(Invalid):
            channel(quantity=Quantity.temperature, unit="A")
        SensorChannel("t", "cf20", Quantity.temperature, "°C", "static", (0, 300))

    def test_bad_range(self):
        with pytest.raises(Invalid):
            SensorChannel("c", "cf20", Quantity.temperature, "°C", "static", (10, 10))

    def test_gateway_channel_cap(self, registry):
        for i in range(12):
            registry.register_channel(channel(cid=f"c{i}"))
        with pytest.raises(Invalid):
            registry.register_channel(channel(cid="c12"))

    def test_unknown_asset(self, registry):
        with pytest.raises(NotFound):
            registry.register_channel(channel(asset="ghost"))


class TestWorkOrders:
    def test_open_sets_status_and_time(self, registry):
        wo = registry.open_work_order("aluminum", "face-milling", "T12",
                                      "PLN-0042", now=100)
        assert (wo.status, wo.opened_at, wo.closed_at) == ("open", 100, None)

    def test_single_open_order_rule(self, registry):
        registry.open_work_order("al", "face", "T1", "P1", now=100)
        with pytest.raises(Conflict):
            registry.open_work_order("st", "drill", "T2", "P2", now=101)

    def test_close_then_reopen_intervals_disjoint(self, registry):
        a = registry.open_work_order("al", "face", "T1", "P1", now=100)
        a = registry.close_work_order(a.id, now=200)
        b = registry.open_work_order("st", "drill", "T2", "P2", now=250)
        b = registry.close_work_order(b.id, now=300)
        orders = registry.work_orders()
        assert len(orders) == 2
        # interval-overlap oracle: sort by open time, each closes before the next opens
        intervals = sorted((w.opened_at, w.closed_at) for w in orders)
        for (o1, c1), (o2, _) in zip(intervals, intervals[1:]):
            assert c1 is not None and c1 >= o1 and c1 < o2

    def test_close_before_open_rejected(self, registry):
        wo = registry.open_work_order("al", "face", "T1", "P1", now=100)
        with pytest.raises(Invalid):
            registry.close_work_order(wo.id, now=50)

    def test_close_twice(self, registry):
        wo = registry.open_work_order("al", "face", "T1", "P1", now=100)
        registry.close_work_order(wo.id, now=200)
        with pytest.raises(Conflict):
            registry.close_work_order(wo.id, now=300)


class TestIncidents:
    def test_log_incident(self, registry):
        registry.register_channel(channel())
        inc = registry.log_incident("vibración anómala", IncidentSeverity.warning,
                                    "cur-l1", now=50)
        assert inc.id == "inc-1" and inc.channel == "cur-l1"

    def test_empty_text_rejected(self, registry):
        with pytest.raises(Invalid):
            registry.log_incident("   ", IncidentSeverity.info)

    def test_unknown_channel_rejected(self, registry):
        with pytest.raises(NotFound):
            registry.log_incident("x", IncidentSeverity.info, "ghost")


class TestAlerts:
    def test_raise_and_acknowledge(self, registry):
        a = registry.raise_alert(AlertKind.envelope_violation, AlertSeverity.warning,
                                 startup_phase=3, magnitude=0.2, now=10)
        acked = registry.acknowledge_alert(a.id, "op-1")
        assert acked.acknowledged and acked.acknowledged_by == "op-1"
        assert acked.raised_at == 10 and acked.magnitude == 0.2

    def test_acknowledge_twice_fails(self, registry):
        a = registry.raise_alert(AlertKind.ingest_gap, AlertSeverity.warning, now=10)
        registry.acknowledge_alert(a.id, "op-1")
        with pytest.raises(Conflict):
            registry.acknowledge_alert(a.id, "op-2")

    def test_unknown_alert(self, registry):
        with pytest.raises(NotFound):
            registry.acknowledge_alert("al-99", "op")

    def test_active_filter(self, registry):
        a = registry.raise_alert(AlertKind.ingest_gap, AlertSeverity.warning, now=10)
        registry.raise_alert(AlertKind.inactivity, AlertSeverity.warning, now=11)
        registry.acknowledge_alert(a.id, "op")
        assert [x.id for x in registry.alerts(active_only=True)] == ["al-2"]
        assert len(registry.alerts()) == 2

    def test_phase_validation(self, registry):
        with pytest.raises(Invalid):
            registry.raise_alert(AlertKind.envelope_violation, AlertSeverity.warning,
                                 startup_phase=5, now=10)


class TestPersistence:
    def test_replay_restores_records(self, tmp_path):
        log = RecordLog(tmp_path)
        reg = TwinRegistry(record_log=log)
        reg.register_asset(machine())
        reg.register_channel(channel())
        wo = reg.open_work_order("al", "face", "T1", "P1", now=100)
        reg.close_work_order(wo.id, now=200)
        reg.open_work_order("st", "drill", "T2", "P2", now=250)
        reg.log_incident("check belt", IncidentSeverity.info, now=260)
        alert = reg.raise_alert(AlertKind.envelope_violation, AlertSeverity.critical,
                                channel="cur-l1", startup_phase=2, magnitude=0.4, now=270)
        reg.acknowledge_alert(alert.id, "op-9")

        fresh = TwinRegistry(record_log=RecordLog(tmp_path))
        assert [w.status for w in fresh.work_orders()] == ["closed", "open"]
        assert fresh.incidents()[0].text == "check belt"
        got = fresh.alert(alert.id)
        assert got.acknowledged and got.acknowledged_by == "op-9"
        # new ids continue after the replayed ones
        fresh.register_asset(machine("cf21"))
        nxt = fresh.log_incident("another", IncidentSeverity.info, now=300)
        assert nxt.id == "inc-2"

    def test_events_emitted_once_per_mutation(self):
        events = []
        reg = TwinRegistry(on_event=lambda kind, payload: events.append(kind))
        reg.register_asset(machine())
        wo = reg.open_work_order("al", "face", "T1", "P1", now=1)
        reg.close_work_order(wo.id, now=2)
        reg.log_incident("x", IncidentSeverity.info, now=3)
        a = reg.raise_alert(AlertKind.ingest_gap, AlertSeverity.warning, now=4)
        reg.acknowledge_alert(a.id, "op")
        assert events == ["workorder_opened", "workorder_closed", "incident",
                          "alert", "alert_ack"]


def test_default_twin_config_applies():
    reg = TwinRegistry()
    apply_twin_config(default_twin_config(), reg)
    assert reg.resolve_qr("QR-01").id == "spindle-head"
    assert len(reg.sensor_channels()) == 5
    assert reg.channel("temp-spindle").unit == "°C"
