"""Top-level command line binding every subsystem together."""
from __future__ import annotations

import json
import signal
import sys
import threading
import time
from datetime import date, datetime, timezone
from pathlib import Path

import click

from . import api, demo
from .detector import DetectionPolicy, evaluate_startup
from .errors import TwinError
from .gateway import (AnomalySpec, DEFAULT_CHANNELS, GatewayChannel,
                      GatewayHttpServer, GatewaySimulator, RegisterServer,
                      StartupProfile, simulate_day, synthesize_startup)
from .ingest import HttpGatewayClient, IngestService
from .learning import ModelStore, ReferenceModel, merge_reference
from .pipeline import (BundleStore, SegmentConfig, align, normalize,
                       segment_phases, startup_from_bundle)
from .store import Sample, TimeSeriesStore, export_csv
from .timebase import Clock, from_iso, to_iso
from .training import days_between


def _fail(exc: Exception) -> "click.ClickException":
    return click.ClickException(str(exc))


@click.group()
def main():
    """Digital twin for a retrofitted milling machine."""


# ---- simulate -----------------------------------------------------------------------


@main.command()
@click.option("--profile", "profile_path", type=click.Path(exists=True), required=True,
              help="startup profile JSON")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--anomaly", "anomaly_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--start", "start_iso", default="2020-01-13T08:06:00Z", show_default=True,
              help="onset timestamp (ISO, UTC)")
@click.option("--jitter", type=float, default=0.0, help="phase-2 duration delta (s)")
@click.option("--lead-in", type=int, default=30, show_default=True)
@click.option("--day/--startup-only", default=False,
              help="emit a whole working-day fragment instead of just the startup")
def simulate(profile_path, seed, anomaly_path, out_dir, start_iso, jitter, lead_in, day):
    """Synthesize one startup (or day) and write per-channel sample files."""
    try:
        profile = StartupProfile.from_dict(json.loads(Path(profile_path).read_text()))
        anomaly = None
        if anomaly_path:
            anomaly = AnomalySpec.from_dict(json.loads(Path(anomaly_path).read_text()))
        onset = from_iso(start_iso)
        if day:
            synth = simulate_day(profile, onset, anomaly=anomaly, seed=seed,
                                 phase2_jitter=jitter, lead_in_s=lead_in)
        else:
            synth = synthesize_startup(profile, anomaly, seed=seed,
                                       phase2_jitter=jitter, lead_in_s=lead_in,
                                       start_ts=onset - lead_in)
    except (TwinError, ValueError, KeyError) as exc:
        raise _fail(exc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ch in DEFAULT_CHANNELS:
        rows = synth.samples(ch.quantity)
        doc = {"channel": ch.id,
               "samples": [{"ts": to_iso(s.ts), "value": s.value} for s in rows]}
        (out / f"{ch.id}.json").write_text(json.dumps(doc), encoding="utf-8")
    truth = {"onset_ts": to_iso(synth.onset_ts),
             "phase_bounds": [list(b) for b in synth.phase_bounds],
             "seed": seed, "jitter": jitter}
    (out / "groundtruth.json").write_text(json.dumps(truth, indent=1), encoding="utf-8")
    click.echo(f"wrote {len(DEFAULT_CHANNELS)} channel files to {out}")


# ---- serve-gateway --------------------------------------------------------------------


def build_simulator(doc: dict, base_dir: Path, pace: bool) -> GatewaySimulator:
    """Gateway config: {"channels": [...], "replay": {channel: samples file}} or
    {"profile": {...}, "days": [{"date", "seed", "jitter", "anomaly"}...]}.
    """
    channels = [GatewayChannel(c["id"], c["quantity"], c["unit"])
                for c in doc["channels"]] if "channels" in doc else list(DEFAULT_CHANNELS)
    sim = GatewaySimulator(channels)
    if "replay" in doc:
        for channel_id, rel in doc["replay"].items():
            payload = json.loads((base_dir / rel).read_text(encoding="utf-8"))
            sim.load(channel_id, [Sample(from_iso(r["ts"]), float(r["value"]))
                                  for r in payload["samples"]])
    for spec in doc.get("days", []):
        profile = StartupProfile.from_dict(doc["profile"])
        anomaly = AnomalySpec.from_dict(spec["anomaly"]) if spec.get("anomaly") else None
        d = date.fromisoformat(spec["date"])
        hh, mm, ss = (int(p) for p in doc.get("onset_time", "08:06:00").split(":"))
        onset = int(datetime(d.year, d.month, d.day, hh, mm, ss,
                             tzinfo=timezone.utc).timestamp())
        sim.feed_startup(simulate_day(profile, onset, anomaly=anomaly,
                                      seed=spec.get("seed", 0),
                                      phase2_jitter=spec.get("jitter", 0.0)))
    if pace:
        earliest = min((s[0].ts for s in (sim.data(c.id, 0, 2 ** 40) for c in channels)
                        if s), default=0)

        class _Paced(Clock):
            start_wall = int(time.time())

            def now(self) -> int:
                return earliest + int(time.time()) - self.start_wall

        sim.clock = _Paced()
    return sim


@main.command(name="serve-gateway")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--http-port", type=int, default=9000, show_default=True)
@click.option("--register-port", type=int, default=9502, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--pace/--no-pace", default=False,
              help="reveal samples at 1 Hz from the start of the timeline")
def serve_gateway(config_path, http_port, register_port, host, pace):
    """Serve the simulated gateway over HTTP JSON and the register protocol."""
    try:
        doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        sim = build_simulator(doc, Path(config_path).parent, pace)
    except (TwinError, ValueError, KeyError) as exc:
        raise _fail(exc)
    http_srv = GatewayHttpServer(sim, host, http_port).start()
    reg_srv = RegisterServer(sim, host, register_port).start()
    click.echo(f"gateway: http://{host}:{http_srv.port}/gw  registers: {host}:{reg_srv.port}")
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    stop.wait()
    http_srv.stop()
    reg_srv.stop()


# ---- ingest -----------------------------------------------------------------------------


@main.command()
@click.option("--gateway", required=True, help="gateway HTTP endpoint")
@click.option("--channels", required=True, help="comma-separated channel ids")
@click.option("--store", "store_dir", type=click.Path(), required=True)
@click.option("--interval", type=float, default=1.0, show_default=True)
@click.option("--once", is_flag=True, help="single polling pass, then exit")
def ingest(gateway, channels, store_dir, interval, once):
    """Poll the gateway JSON API and append samples to the store."""
    channel_list = [c.strip() for c in channels.split(",") if c.strip()]
    store = TimeSeriesStore(store_dir, channels=channel_list)
    service = IngestService(HttpGatewayClient(gateway), store, channel_list,
                            interval_s=interval)
    if once:
        results = service.step()
        for ch, res in results.items():
            click.echo(f"{ch}: appended {res.appended}, rejected {res.rejected}, "
                       f"gaps {len(res.gaps)}")
        return
    click.echo(f"ingesting {channel_list} from {gateway} every {interval}s")
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    service.start()
    stop.wait()
    service.stop()


# ---- export ------------------------------------------------------------------------------


@main.command()
@click.option("--store", "store_dir", type=click.Path(exists=True), required=True)
@click.option("--day", required=True, help="UTC day, YYYY-MM-DD")
@click.option("--out", "out_path", type=click.Path(), default="-",
              help="output file, - for stdout")
@click.option("--channels", default="cur-l1,cur-l2,cur-l3", show_default=True)
def export(store_dir, day, out_path, channels):
    """Export a day of three-phase current as the HMI data table CSV."""
    try:
        store = TimeSeriesStore(store_dir)
        text = export_csv(store, date.fromisoformat(day),
                          [c.strip() for c in channels.split(",")])
    except (TwinError, ValueError) as exc:
        raise _fail(exc)
    if out_path == "-":
        click.echo(text, nl=False)
    else:
        Path(out_path).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out_path}")


# ---- train / merge -------------------------------------------------------------------------


@main.command()
@click.option("--store", "store_dir", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--k", type=int, default=None, help="fixed cluster count")
@click.option("--elbow", is_flag=True, help="select k with the elbow rule (default)")
@click.option("--date-range", default=None, help="A..B (ISO days, inclusive)")
@click.option("--restarts", type=int, default=10, show_default=True)
def train(store_dir, seed, k, elbow, date_range, restarts):
    """Cluster historical startups from the store into a new cluster model."""
    if k is not None and elbow:
        raise click.UsageError("--k and --elbow are mutually exclusive")
    try:
        store = TimeSeriesStore(store_dir)
        bundles = BundleStore(store_dir)
        models = ModelStore(store_dir)
        if date_range:
            first, last = date_range.split("..")
            days = days_between(first, last)
        else:
            candidates = [c for c in sorted(store.channels) if c.startswith("cur-")]
            if not candidates:
                raise _fail(ValueError("no current channels in store"))
            days = sorted({d.isoformat() for ch in candidates for d in store.days(ch)})
        from .training import train_from_store
        model = train_from_store(store, days, seed=seed, k=k, restarts=restarts,
                                 bundles=bundles, models=models)
    except TwinError as exc:
        raise _fail(exc)
    click.echo(f"trained k={model.k} on {len(model.assignments)} startups "
               f"(sse {model.sse:.6f}, seed {seed})")
    if model.sse_curve:
        curve = ", ".join(f"k={kk}:{v:.4f}" for kk, v in sorted(model.sse_curve.items()))
        click.echo(f"sse curve: {curve}")
    from .learning import record_assignments_table
    click.echo(record_assignments_table(model), nl=False)


def _parse_margins(margin_opts) -> tuple[float, float, float, float]:
    margins = [0.0] * 4
    for opt in margin_opts:
        key, _, val = opt.partition("=")
        idx = int(key.removeprefix("phase")) - 1
        if not 0 <= idx < 4:
            raise click.UsageError(f"unknown phase in --margin {opt!r}")
        margins[idx] = float(val)
    return tuple(margins)


@main.command()
@click.option("--store", "store_dir", type=click.Path(exists=True), required=True)
@click.option("--include", required=True, help="comma-separated cluster ids")
@click.option("--margin", "margin_opts", multiple=True,
              help="phaseN=V additive slack, e.g. --margin phase3=0.05")
@click.option("--label", "label_opts", multiple=True, help="N=text cluster label")
@click.option("--notes", default="")
@click.option("--author", default="expert", show_default=True)
@click.option("--activate", "do_activate", is_flag=True)
def merge(store_dir, include, margin_opts, label_opts, notes, author, do_activate):
    """Compose a reference model from chosen clusters, with per-phase margins."""
    try:
        models = ModelStore(store_dir)
        cm = models.load_cluster_model()
        included = [int(c) for c in include.split(",") if c.strip()]
        labels = {}
        for opt in label_opts:
            key, _, val = opt.partition("=")
            labels[int(key)] = val
        ref = merge_reference(cm, included, _parse_margins(margin_opts),
                              labels=labels, notes=notes, author=author,
                              version=models.next_version())
        path = models.save_reference(ref)
        if do_activate:
            models.activate(ref.version)
    except (TwinError, ValueError) as exc:
        raise _fail(exc)
    state = " (active)" if do_activate else ""
    click.echo(f"reference v{ref.version} -> {path}{state}")


# ---- detect -----------------------------------------------------------------------------------


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True,
              help="reference model JSON")
@click.option("--bundle", "bundle_path", type=click.Path(exists=True), required=True,
              help="startup bundle JSON")
def detect(model_path, bundle_path):
    """Offline evaluation of one startup bundle against a reference model."""
    try:
        ref = ReferenceModel.from_dict(json.loads(Path(model_path).read_text()))
        raw, bounds = startup_from_bundle(json.loads(Path(bundle_path).read_text()))
        if bounds is None:
            bounds = segment_phases(raw, SegmentConfig())
        aligned = normalize(align(raw, bounds, ref.lengths), ref.normalization)
        verdict = evaluate_startup(aligned, ref, DetectionPolicy())
    except (TwinError, ValueError, KeyError) as exc:
        raise _fail(exc)
    click.echo(json.dumps(verdict.to_dict(), indent=1, sort_keys=True))


# ---- serve -------------------------------------------------------------------------------------


@main.command()
@click.option("--store", "store_dir", type=click.Path(), required=True,
              envvar="MILLTWIN_STORE")
@click.option("--host", default="127.0.0.1", show_default=True,
              envvar="MILLTWIN_HOST")
@click.option("--port", type=int, default=8000, show_default=True,
              envvar="MILLTWIN_PORT")
@click.option("--gateway", default=None, envvar="MILLTWIN_GATEWAY",
              help="gateway HTTP endpoint to ingest from")
@click.option("--twin-config", type=click.Path(exists=True), default=None,
              envvar="MILLTWIN_TWIN_CONFIG")
@click.option("--hmi", "hmi_dir", type=click.Path(exists=True), default=None,
              envvar="MILLTWIN_HMI", help="static HMI asset directory")
def serve(store_dir, host, port, gateway, twin_config, hmi_dir):
    """Run the twin API service (and background ingest/monitor when configured)."""
    config = api.ApiConfig(store_dir=Path(store_dir), host=host, port=port,
                           gateway=gateway,
                           twin_config=Path(twin_config) if twin_config else None,
                           hmi_dir=Path(hmi_dir) if hmi_dir else None)
    try:
        api.serve(config)
    except TwinError as exc:
        raise _fail(exc)


# ---- demo --------------------------------------------------------------------------------------


@main.command(name="demo")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="demo-out", show_default=True)
def demo_cmd(seed, out_dir):
    """End-to-end run: simulate, ingest, train with elbow, merge, evaluate."""
    try:
        report = demo.run_demo(seed=seed, out_dir=out_dir)
    except TwinError as exc:
        raise _fail(exc)
    click.echo(report.text(), nl=False)
    anomalies_ok = all(v["classification"] == "anomalous"
                       for v in report.validation if v["expected"] == "anomalous")
    clean_ok = all(not v["alerts"] for v in report.validation if v["expected"] == "clean")
    if not (anomalies_ok and clean_ok):
        raise click.ClickException("validation startups not classified as expected")


if __name__ == "__main__":
    sys.exit(main())
