import pytest

from milltwin.gateway import GatewaySimulator, simulate_day
from milltwin.ingest import (GatewayUnreachable, HttpGatewayClient,
                             IngestCursor, IngestService,
                             InProcessGatewayClient, poll_once)
from milltwin.store import Sample, TimeSeriesStore
from milltwin.timebase import ManualClock
from milltwin.twin import (AlertKind, AssetKind, AssetNode, Quantity,
                           SensorChannel, TwinRegistry)

from test_gateway import table1_profile


class ListClient:
    """Canned-batch gateway client for shaping edge cases."""

    def __init__(self, batches):
        self.batches = list(batches)

    def channels(self):
        return []

    def data(self, channel, from_ts, to_ts):
        batch = self.batches.pop(0) if self.batches else []
        return [s for s in batch if from_ts <= s.ts <= to_ts]


def make_sim(clock, samples):
    sim = GatewaySimulator(clock=clock)
    sim.load("cur-l1", samples)
    return sim


class TestPollOnce:
    def test_fresh_batch_appended_and_cursor_advanced(self, store):
        clock = ManualClock(1010)
        sim = make_sim(clock, [Sample(1000 + i, float(i)) for i in range(10)])
        cursor = IngestCursor.resume(store, "cur-l1")
        res = poll_once(InProcessGatewayClient(sim), store, "cur-l1", cursor, now=1010)
        assert res.appended == 10 and cursor.last_ts == 1009
        assert len(store.query("cur-l1", 0, 2000)) == 10

    def test_redelivery_is_idempotent(self, store):
        clock = ManualClock(1010)
        sim = make_sim(clock, [Sample(1000 + i, float(i)) for i in range(10)])
        client = InProcessGatewayClient(sim)
        cursor = IngestCursor.resume(store, "cur-l1")
        poll_once(client, store, "cur-l1", cursor, now=1010)
        again = poll_once(client, store, "cur-l1", cursor, now=1010)
        assert again.appended == 0
        # even with a reset cursor the store drops what it already has
        stale = IngestCursor("cur-l1", None)
        res = poll_once(client, store, "cur-l1", stale, now=1010)
        assert res.appended == 0
        assert len(store.query("cur-l1", 0, 2000)) == 10

    def test_gap_recorded_with_missing_span(self, store):
        batch = [Sample(1000, 1.0), Sample(1001, 1.0), Sample(1007, 1.0)]
        cursor = IngestCursor("cur-l1", None)
        res = poll_once(ListClient([batch]), store, "cur-l1", cursor, now=2000)
        assert len(res.gaps) == 1
        assert res.gaps[0].seconds == 5  # 1001 -> 1007 at 1 s cadence
        assert res.appended == 3

    def test_non_monotone_batch_offenders_rejected(self, store):
        batch = [Sample(1000, 1.0), Sample(999, 9.0), Sample(1001, 2.0),
                 Sample(1001, 3.0)]
        cursor = IngestCursor("cur-l1", None)
        res = poll_once(ListClient([batch]), store, "cur-l1", cursor, now=2000)
        assert res.rejected == 2
        assert [s.value for s in store.query("cur-l1", 0, 2000)] == [1.0, 2.0]


class TestIngestService:
    def test_healthy_minute_four_channels(self, store):
        clock = ManualClock(0)
        sim = GatewaySimulator(clock=clock)
        for ch in ("cur-l1", "cur-l2", "cur-l3", "temp-spindle"):
            sim.load(ch, [Sample(i, 1.0) for i in range(60)])
        service = IngestService(InProcessGatewayClient(sim), store,
                                ["cur-l1", "cur-l2", "cur-l3", "temp-spindle"],
                                clock=clock)
        for now in range(0, 61, 5):
            clock.set(now)
            service.step()
        total = sum(len(store.query(ch, 0, 120))
                    for ch in ("cur-l1", "cur-l2", "cur-l3", "temp-spindle"))
        assert total == 240

    def test_outage_raises_one_gap_alert_and_resumes(self, store):
        registry = TwinRegistry()
        registry.register_asset(AssetNode("cf20", "CF-20", AssetKind.machine))
        registry.register_channel(SensorChannel("cur-l1", "cf20",
                                                Quantity.current_phase_1, "A",
                                                "static", (0, 50)))
        clock = ManualClock(0)
        sim = make_sim(clock, [Sample(i, 1.0) for i in range(120)])
        service = IngestService(InProcessGatewayClient(sim), store, ["cur-l1"],
                                registry=registry, clock=clock)
        clock.set(10)
        service.step()
        sim.set_outage(True)  # 30 s outage: polls fail, data keeps accruing
        for now in range(11, 41):
            clock.set(now)
            service.step()
        assert service.degraded
        sim.set_outage(False)
        clock.set(120)
        service.step()
        assert not service.degraded
        assert len(store.query("cur-l1", 0, 200)) == 120  # no data loss
        gap_alerts = [a for a in registry.alerts() if a.kind is AlertKind.ingest_gap]
        assert len(gap_alerts) == 0  # outage hid no samples, so no gap alert

    def test_gap_alert_when_stream_has_hole(self, store):
        registry = TwinRegistry()
        registry.register_asset(AssetNode("cf20", "CF-20", AssetKind.machine))
        registry.register_channel(SensorChannel("cur-l1", "cf20",
                                                Quantity.current_phase_1, "A",
                                                "static", (0, 50)))
        clock = ManualClock(100)
        sim = GatewaySimulator(clock=clock)
        sim.load("cur-l1", [Sample(0, 1.0), Sample(50, 1.0)])  # 49 s hole
        service = IngestService(InProcessGatewayClient(sim), store, ["cur-l1"],
                                registry=registry, clock=clock)
        service.step()
        gap_alerts = [a for a in registry.alerts() if a.kind is AlertKind.ingest_gap]
        assert len(gap_alerts) == 1
        assert gap_alerts[0].magnitude == 49.0

    def test_zero_channels_is_healthy_noop(self, store):
        clock = ManualClock(0)
        service = IngestService(InProcessGatewayClient(GatewaySimulator(clock=clock)),
                                store, [], clock=clock)
        assert service.step() == {}
        assert not service.degraded

    def test_backoff_caps_and_recovers(self, store):
        clock = ManualClock(0)
        sim = make_sim(clock, [Sample(0, 1.0)])
        sim.set_outage(True)
        service = IngestService(InProcessGatewayClient(sim), store, ["cur-l1"],
                                clock=clock)
        waits = []
        for now in range(0, 2000, 1):
            clock.set(now)
            before = service._backoff_until
            service.step()
            if service._backoff_until != before and service._backoff_until > now:
                waits.append(service._backoff_until - now)
        assert max(waits) == 60.0  # capped exponential backoff
        assert waits[0] == 1.0

    def test_restart_resumes_from_store_tail(self, store, tmp_path):
        clock = ManualClock(100)
        sim = make_sim(clock, [Sample(i, float(i)) for i in range(103)])
        client = InProcessGatewayClient(sim)
        IngestService(client, store, ["cur-l1"], clock=clock).step()
        # "restart": brand-new service over the same directory
        reopened = TimeSeriesStore(store.root)
        clock.set(102)
        service = IngestService(client, reopened, ["cur-l1"], clock=clock)
        assert service.cursors["cur-l1"].last_ts == 100
        res = service.step()
        assert res["cur-l1"].appended == 2  # only ts 101, 102


class TestHttpClient:
    def test_unreachable_raises(self):
        client = HttpGatewayClient("http://127.0.0.1:1", timeout=0.2)
        with pytest.raises(GatewayUnreachable):
            client.data("cur-l1", 0, 10)

    def test_round_trip_against_live_gateway(self, store):
        from milltwin.gateway import GatewayHttpServer
        clock = ManualClock(0)
        sim = GatewaySimulator(clock=clock)
        synth = simulate_day(table1_profile(noise=0.05), onset_ts=30, seed=9,
                             run_s=30, idle_tail_s=10)
        sim.feed_startup(synth)
        srv = GatewayHttpServer(sim).start()
        try:
            client = HttpGatewayClient(srv.endpoint)
            assert [c["id"] for c in client.channels()][0] == "cur-l1"
            clock.set(10_000)
            cursor = IngestCursor.resume(store, "cur-l1")
            res = poll_once(client, store, "cur-l1", cursor, now=10_000)
            assert res.appended == len(synth.series["current_phase_1"])
            got = store.query("cur-l1", 0, 10_000)
            want = synth.samples("current_phase_1")
            assert got == want
        finally:
            srv.stop()
            client.close()
