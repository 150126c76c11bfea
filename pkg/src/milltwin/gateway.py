"""Legacy-machine + industrial-gateway simulator.

Synthesizes 1 Hz telemetry (three-phase current, spindle temperature, vibration
RMS) with a parameterized 4-phase startup signature and injectable anomalies.
Serves the data over an HTTP JSON API and a Modbus-TCP-style register
interface.

Register map (the simulator's contract, 2 registers per channel):
channel i -> holding registers 2i (high word) and 2i+1 (low word), together a
big-endian 32-bit signed integer equal to round(latest_value * 1000).
"""
from __future__ import annotations

import json
import socketserver
import struct
import threading
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional, Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np

from .errors import Invalid, NotFound
from .store import Sample
from .timebase import Clock, parse_ts, to_iso

MAX_CHANNELS = 12
REGISTER_SCALE = 1000
READ_HOLDING_REGISTERS = 0x03

# quantity keys used by the synthesizer, in gateway channel order
CURRENT_QUANTITIES = ("current_phase_1", "current_phase_2", "current_phase_3")


@dataclass(frozen=True)
class TemperatureCurve:
    ambient: float = 20.0
    warmup_rate: float = 0.4  # °C/s once the motor runs
    cap: float = 300.0

    def __post_init__(self):
        if self.cap > 300.0:
            raise Invalid("temperature cap must be <= 300 °C")


@dataclass(frozen=True)
class StartupProfile:
    phase_durations: tuple[float, float, float, float]
    phase_levels: tuple[tuple[float, float, float], ...]  # 4 startup phases x 3 lines
    idle_levels: tuple[float, float, float]
    ramp_seconds: float = 2.0
    noise_sigma: float = 0.0
    temperature: TemperatureCurve = field(default_factory=TemperatureCurve)
    vibration_base: float = 0.9

    def __post_init__(self):
        if len(self.phase_durations) != 4 or any(d <= 0 for d in self.phase_durations):
            raise Invalid("four positive phase durations required")
        if len(self.phase_levels) != 4 or any(len(lv) != 3 for lv in self.phase_levels):
            raise Invalid("phase_levels must be 4 x 3")
        if any(v < 0 for lv in self.phase_levels for v in lv) or any(v < 0 for v in self.idle_levels):
            raise Invalid("current levels must be >= 0")
        if self.noise_sigma < 0 or self.ramp_seconds < 0:
            raise Invalid("ramp_seconds and noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return {
            "phase_durations": list(self.phase_durations),
            "phase_levels": [list(lv) for lv in self.phase_levels],
            "idle_levels": list(self.idle_levels),
            "ramp_seconds": self.ramp_seconds,
            "noise_sigma": self.noise_sigma,
            "temperature": {"ambient": self.temperature.ambient,
                            "warmup_rate": self.temperature.warmup_rate,
                            "cap": self.temperature.cap},
            "vibration_base": self.vibration_base,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StartupProfile":
        t = d.get("temperature", {})
        return cls(
            phase_durations=tuple(d["phase_durations"]),
            phase_levels=tuple(tuple(lv) for lv in d["phase_levels"]),
            idle_levels=tuple(d["idle_levels"]),
            ramp_seconds=d.get("ramp_seconds", 2.0),
            noise_sigma=d.get("noise_sigma", 0.0),
            temperature=TemperatureCurve(t.get("ambient", 20.0), t.get("warmup_rate", 0.4),
                                         t.get("cap", 300.0)),
            vibration_base=d.get("vibration_base", 0.9),
        )


@dataclass(frozen=True)
class AnomalySpec:
    kind: str  # spike | level_shift | phase_imbalance | prolonged_phase
    target_phase: int
    onset_offset: float = 0.0
    magnitude: float = 0.0  # A, or seconds for prolonged_phase
    duration: float = 0.0

    KINDS = ("spike", "level_shift", "phase_imbalance", "prolonged_phase")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise Invalid(f"unknown anomaly kind {self.kind!r}")
        if self.target_phase not in (1, 2, 3, 4):
            raise Invalid("target_phase must be 1..4")
        if self.magnitude <= 0:
            raise Invalid("anomaly magnitude must be > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target_phase": self.target_phase,
                "onset_offset": self.onset_offset, "magnitude": self.magnitude,
                "duration": self.duration}

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalySpec":
        return cls(kind=d["kind"], target_phase=int(d["target_phase"]),
                   onset_offset=d.get("onset_offset", 0.0),
                   magnitude=d["magnitude"], duration=d.get("duration", 0.0))


@dataclass
class SyntheticStartup:
    start_ts: int
    onset_index: int                      # first sample of phase 1
    series: dict[str, np.ndarray]         # quantity -> values, 1 Hz
    phase_bounds: list[tuple[int, int]]   # [start, end) per phase, relative to onset

    @property
    def onset_ts(self) -> int:
        return self.start_ts + self.onset_index

    def samples(self, quantity: str) -> list[Sample]:
        return [Sample(self.start_ts + i, float(v)) for i, v in enumerate(self.series[quantity])]


def synthesize_startup(profile: StartupProfile, anomaly: Optional[AnomalySpec] = None,
                       seed: int = 0, phase2_jitter: float = 0.0,
                       lead_in_s: int = 30, start_ts: int = 0) -> SyntheticStartup:
    """Deterministic startup trace: idle lead-in, then the four startup phases.

    Current lines step between phase levels with linear ramps and clipped
    Gaussian noise; temperature warms from motor start; vibration appears with
    the motor. phase2_jitter models the operator's variable emergency-stop
    release.
    """
    durations = [int(round(d)) for d in profile.phase_durations]
    durations[1] = int(round(profile.phase_durations[1] + phase2_jitter))
    if durations[1] <= 0:
        raise Invalid("phase-2 jitter collapses the phase")
    if anomaly is not None and anomaly.kind == "prolonged_phase":
        durations[anomaly.target_phase - 1] += int(round(anomaly.magnitude))
    if anomaly is not None and anomaly.onset_offset >= durations[anomaly.target_phase - 1]:
        raise Invalid("anomaly onset falls outside its target phase")

    ramp_n = int(round(profile.ramp_seconds))
    total = lead_in_s + sum(durations)
    rng = np.random.default_rng(seed)

    bounds: list[tuple[int, int]] = []
    pos = lead_in_s
    for d in durations:
        bounds.append((pos - lead_in_s, pos - lead_in_s + d))
        pos += d

    currents = np.zeros((3, total))
    for line in range(3):
        prev = profile.idle_levels[line]
        currents[line, :lead_in_s] = prev
        pos = lead_in_s
        for p in range(4):
            level = profile.phase_levels[p][line]
            seg = durations[p]
            for j in range(seg):
                if j < ramp_n:
                    v = prev + (level - prev) * (j + 1) / (ramp_n + 1)
                else:
                    v = level
                currents[line, pos + j] = v
            prev = level
            pos += seg

    if anomaly is not None and anomaly.kind in ("spike", "level_shift", "phase_imbalance"):
        ph_start, ph_end = bounds[anomaly.target_phase - 1]
        a0 = lead_in_s + ph_start + int(round(anomaly.onset_offset))
        a1 = min(total, a0 + int(round(anomaly.duration)))
        lines = (0,) if anomaly.kind == "phase_imbalance" else (0, 1, 2)
        for line in lines:
            currents[line, a0:a1] += anomaly.magnitude

    if profile.noise_sigma > 0:
        s = profile.noise_sigma
        noise = np.clip(rng.normal(0.0, s, size=currents.shape), -6 * s, 6 * s)
        currents = np.maximum(currents + noise, 0.0)

    motor_on = lead_in_s + durations[0] + durations[1]  # motor-start phase begins
    t = profile.temperature
    temperature = np.full(total, t.ambient)
    ramp = t.ambient + t.warmup_rate * np.arange(1, total - motor_on + 1)
    temperature[motor_on:] = np.minimum(ramp, t.cap)

    vibration = np.zeros(total)
    vibration[motor_on:] = profile.vibration_base

    series = {
        "current_phase_1": currents[0],
        "current_phase_2": currents[1],
        "current_phase_3": currents[2],
        "temperature": temperature,
        "vibration_rms": vibration,
    }
    return SyntheticStartup(start_ts=start_ts, onset_index=lead_in_s,
                            series=series, phase_bounds=bounds)


def simulate_day(profile: StartupProfile, onset_ts: int,
                 anomaly: Optional[AnomalySpec] = None, seed: int = 0,
                 phase2_jitter: float = 0.0, lead_in_s: int = 30,
                 run_s: int = 180, idle_tail_s: int = 60) -> SyntheticStartup:
    """A working day fragment: startup, then steady running, then back to idle."""
    synth = synthesize_startup(profile, anomaly, seed=seed, phase2_jitter=phase2_jitter,
                               lead_in_s=lead_in_s, start_ts=onset_ts - lead_in_s)
    rng = np.random.default_rng(seed ^ 0x5EED)
    n = len(synth.series["current_phase_1"])
    ext = run_s + idle_tail_s
    for line, key in enumerate(CURRENT_QUANTITIES):
        run_level = profile.phase_levels[3][line]
        tail = np.concatenate([np.full(run_s, run_level),
                               np.full(idle_tail_s, profile.idle_levels[line])])
        if profile.noise_sigma > 0:
            s = profile.noise_sigma
            tail = np.maximum(tail + np.clip(rng.normal(0, s, ext), -6 * s, 6 * s), 0.0)
        synth.series[key] = np.concatenate([synth.series[key], tail])
    last_t = synth.series["temperature"][-1]
    cool = np.concatenate([np.full(run_s, last_t),
                           np.maximum(np.full(idle_tail_s, last_t) -
                                      0.2 * np.arange(idle_tail_s), profile.temperature.ambient)])
    synth.series["temperature"] = np.concatenate([synth.series["temperature"], cool])
    vib_tail = np.concatenate([np.full(run_s, profile.vibration_base), np.zeros(idle_tail_s)])
    synth.series["vibration_rms"] = np.concatenate([synth.series["vibration_rms"], vib_tail])
    assert all(len(v) == n + ext for v in synth.series.values())
    return synth


@dataclass(frozen=True)
class GatewayChannel:
    id: str
    quantity: str
    unit: str

    def to_dict(self) -> dict:
        return {"id": self.id, "quantity": self.quantity, "unit": self.unit}


DEFAULT_CHANNELS = (
    GatewayChannel("cur-l1", "current_phase_1", "A"),
    GatewayChannel("cur-l2", "current_phase_2", "A"),
    GatewayChannel("cur-l3", "current_phase_3", "A"),
    GatewayChannel("temp-spindle", "temperature", "°C"),
    GatewayChannel("vib-spindle", "vibration_rms", "mm/s"),
)


class GatewaySimulator:
    """Holds per-channel timelines and reveals samples up to the clock's now."""

    def __init__(self, channels: Sequence[GatewayChannel] = DEFAULT_CHANNELS,
                 clock: Clock | None = None):
        if len(channels) > MAX_CHANNELS:
            raise Invalid(f"gateway accepts at most {MAX_CHANNELS} channels, got {len(channels)}")
        self.channel_list = list(channels)
        self._by_id = {c.id: c for c in channels}
        self.clock = clock or Clock()
        self._series: dict[str, list[Sample]] = {c.id: [] for c in channels}
        self._lock = threading.Lock()
        self._outage = False

    # ---- timeline construction ----------------------------------------------

    def load(self, channel_id: str, samples: Sequence[Sample]) -> None:
        if channel_id not in self._by_id:
            raise NotFound(f"unknown channel {channel_id!r}")
        with self._lock:
            merged = sorted(set(self._series[channel_id]) | set(samples))
            self._series[channel_id] = merged

    def feed_startup(self, synth: SyntheticStartup) -> None:
        for ch in self.channel_list:
            if ch.quantity in synth.series:
                self.load(ch.id, synth.samples(ch.quantity))

    def set_outage(self, down: bool) -> None:
        self._outage = down

    @property
    def outage(self) -> bool:
        return self._outage

    # ---- query side -----------------------------------------------------------

    def channels_payload(self) -> list[dict]:
        return [c.to_dict() for c in self.channel_list]

    def data(self, channel_id: str, from_ts: int, to_ts: int) -> list[Sample]:
        if channel_id not in self._by_id:
            raise NotFound(f"unknown channel {channel_id!r}")
        to_ts = min(to_ts, self.clock.now())
        with self._lock:
            series = self._series[channel_id]
            if to_ts < from_ts:
                return []
            lo = bisect_left(series, Sample(from_ts, float("-inf")))
            hi = bisect_right(series, Sample(to_ts, float("inf")))
            return series[lo:hi]

    def latest(self, channel_id: str) -> Sample | None:
        if channel_id not in self._by_id:
            raise NotFound(f"unknown channel {channel_id!r}")
        now = self.clock.now()
        with self._lock:
            series = self._series[channel_id]
            hi = bisect_right(series, Sample(now, float("inf")))
            return series[hi - 1] if hi > 0 else None

    def register_words(self, start: int, count: int) -> list[int] | None:
        """16-bit register words for [start, start+count); None if out of range."""
        n_regs = 2 * len(self.channel_list)
        if count < 1 or start < 0 or start + count > n_regs:
            return None
        packed_by_channel: dict[int, bytes] = {}
        words = []
        for reg in range(start, start + count):
            idx = reg // 2
            if idx not in packed_by_channel:
                latest = self.latest(self.channel_list[idx].id)
                raw = 0 if latest is None else int(round(latest.value * REGISTER_SCALE))
                raw = max(-(2 ** 31), min(2 ** 31 - 1, raw))
                packed_by_channel[idx] = struct.pack(">i", raw)
            packed = packed_by_channel[idx]
            word = packed[:2] if reg % 2 == 0 else packed[2:]
            words.append(struct.unpack(">H", word)[0])
        return words


# ---- HTTP JSON API ------------------------------------------------------------


class _GatewayHandler(BaseHTTPRequestHandler):
    sim: GatewaySimulator  # set by server factory

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.sim.outage:
            self._send(503, {"error": "gateway unavailable"})
            return
        url = urlparse(self.path)
        if url.path == "/gw/channels":
            self._send(200, {"channels": self.sim.channels_payload()})
        elif url.path == "/gw/data":
            q = parse_qs(url.query)
            channel = q.get("channel", [""])[0]
            try:
                frm = parse_ts(q.get("from", ["0"])[0])
                to = parse_ts(q.get("to", [str(self.sim.clock.now())])[0])
            except ValueError:
                self._send(400, {"error": "bad from/to timestamp"})
                return
            try:
                rows = self.sim.data(channel, frm, to)
            except NotFound:
                self._send(404, {"channel": channel, "samples": [],
                                 "error": "unknown channel"})
                return
            self._send(200, {"channel": channel,
                             "samples": [{"ts": to_iso(s.ts), "value": s.value}
                                         for s in rows]})
        else:
            self._send(404, {"error": "not found"})


class GatewayHttpServer:
    def __init__(self, sim: GatewaySimulator, host: str = "127.0.0.1", port: int = 0):
        handler = type("Handler", (_GatewayHandler,), {"sim": sim})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def endpoint(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "GatewayHttpServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


# ---- register (Modbus-TCP style) interface ------------------------------------

EXC_ILLEGAL_FUNCTION = 0x01
EXC_ILLEGAL_ADDRESS = 0x02
EXC_ILLEGAL_VALUE = 0x03


class _RegisterHandler(socketserver.BaseRequestHandler):
    sim: GatewaySimulator

    def handle(self):
        while True:
            header = self._read_exact(7)
            if header is None:
                return
            txn, proto, length, unit = struct.unpack(">HHHB", header)
            if length < 2 or length > 254:
                return  # unrecoverable framing error
            pdu = self._read_exact(length - 1)
            if pdu is None:
                return
            self.request.sendall(self._respond(txn, unit, pdu))

    def _read_exact(self, n: int) -> bytes | None:
        buf = b""
        while len(buf) < n:
            chunk = self.request.recv(n - len(buf))
            if not chunk:
                return None
            buf += chunk
        return buf

    def _respond(self, txn: int, unit: int, pdu: bytes) -> bytes:
        func = pdu[0]
        if func != READ_HOLDING_REGISTERS:
            return self._exception(txn, unit, func, EXC_ILLEGAL_FUNCTION)
        if len(pdu) != 5:
            return self._exception(txn, unit, func, EXC_ILLEGAL_VALUE)
        start, count = struct.unpack(">HH", pdu[1:5])
        words = self.sim.register_words(start, count)
        if words is None:
            return self._exception(txn, unit, func, EXC_ILLEGAL_ADDRESS)
        payload = struct.pack(">B", 2 * len(words)) + struct.pack(f">{len(words)}H", *words)
        body = struct.pack(">BB", unit, func) + payload
        return struct.pack(">HHH", txn, 0, len(body)) + body

    @staticmethod
    def _exception(txn: int, unit: int, func: int, code: int) -> bytes:
        body = struct.pack(">BBB", unit, func | 0x80, code)
        return struct.pack(">HHH", txn, 0, len(body)) + body


class RegisterServer:
    def __init__(self, sim: GatewaySimulator, host: str = "127.0.0.1", port: int = 0):
        handler = type("Handler", (_RegisterHandler,), {"sim": sim})
        socketserver.ThreadingTCPServer.allow_reuse_address = True
        self._server = socketserver.ThreadingTCPServer((host, port), handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> "RegisterServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


def read_registers(host: str, port: int, start: int, count: int,
                   txn: int = 1, unit: int = 1, timeout: float = 5.0) -> list[int]:
    """Minimal register-protocol client (interoperability demonstration + tests)."""
    import socket

    with socket.create_connection((host, port), timeout=timeout) as sock:
        req = struct.pack(">HHHBBHH", txn, 0, 6, unit, READ_HOLDING_REGISTERS, start, count)
        sock.sendall(req)
        header = _recv_exact(sock, 7)
        rtxn, proto, length, runit = struct.unpack(">HHHB", header)
        body = _recv_exact(sock, length - 1)
        func = body[0]
        if func & 0x80:
            raise IOError(f"register exception code {body[1]}")
        byte_count = body[1]
        return list(struct.unpack(f">{byte_count // 2}H", body[2:2 + byte_count]))


def decode_pair(words: Sequence[int]) -> int:
    """Decode the two 16-bit words of one channel into the scaled int32 value."""
    return struct.unpack(">i", struct.pack(">HH", words[0], words[1]))[0]


def _recv_exact(sock, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise IOError("connection closed mid-frame")
        buf += chunk
    return buf
