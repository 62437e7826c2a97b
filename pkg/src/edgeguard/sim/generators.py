"""Deterministic generators of labeled client-to-broker MQTT traffic.

Every generator returns a list of `SimPacket` on a virtual clock.  Connection
ids are ``<ip>:<port>``; `seq` numbers packets within one connection.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from ..mqtt import codec
from ..schema import ClassLabel


@dataclass(frozen=True)
class SimPacket:
    time: float
    conn_id: str
    seq: int
    frame: bytes
    label: ClassLabel

    @property
    def source(self) -> str:
        return self.conn_id.rpartition(":")[0]


class _Stream:
    def __init__(self, label: ClassLabel):
        self.label = label
        self.packets: list[SimPacket] = []
        self._seq: dict[str, int] = {}

    def add(self, t: float, conn: str, frame: bytes) -> None:
        n = self._seq.get(conn, 0)
        self._seq[conn] = n + 1
        self.packets.append(SimPacket(float(t), conn, n, frame, self.label))


_ROOMS = ("kitchen", "hall", "garage", "office", "lab", "bedroom")
# (low, high, step): readings are quantized the way cheap sensors report them.
_SENSORS = {
    "temperature": (18.0, 26.0, 0.5),
    "humidity": (30, 60, 1),
    "light": (0, 1000, 50),
    "co2": (400, 1000, 25),
    "motion": (0, 1, 1),
    "door": (0, 1, 1),
    "fan": (0, 3, 1),
}


def _reading(rng: np.random.Generator, sensor: str) -> bytes:
    lo, hi, step = _SENSORS[sensor]
    n = int(round((hi - lo) / step))
    v = lo + step * int(rng.integers(0, n + 1))
    if isinstance(step, int):
        v = int(v)
    return json.dumps({sensor: v}, separators=(",", ":")).encode()


def gen_legitimate(
    clients: int = 10,
    publish_rate: float = 1.0,
    seed: int = 0,
    duration: float = 60.0,
    publishes: int | None = None,
    keepalive: int = 60,
    subscribe_fraction: float = 0.5,
    qos1_fraction: float = 0.2,
    credential_fraction: float = 0.0,
    start: float = 0.0,
) -> list[SimPacket]:
    """Sensor clients: CONNECT, optional SUBSCRIBE, PUBLISH at `publish_rate` per
    client (or exactly `publishes` each), PINGREQ across idle gaps, DISCONNECT."""
    if clients < 1:
        raise ValueError("clients must be >= 1")
    rng = np.random.default_rng(seed)
    s = _Stream(ClassLabel.LEGITIMATE)
    sensors = list(_SENSORS)
    for c in range(clients):
        conn = f"10.0.0.{c % 250 + 1}:{40000 + c}"
        room = _ROOMS[c % len(_ROOMS)]
        sensor = sensors[int(rng.integers(len(sensors)))]
        topic = f"home/{room}/{sensor}"
        t = start + float(rng.uniform(0, min(5.0, duration / 4)))
        creds = {}
        if rng.random() < credential_fraction:
            creds = {"username": f"dev{c}", "password": f"pw-{c}".encode()}
        s.add(t, conn, codec.connect(f"sensor-{c:04d}", keepalive=keepalive, **creds))
        last = t
        msgid = 1
        if rng.random() < subscribe_fraction:
            t += float(rng.uniform(0.01, 0.2))
            s.add(t, conn, codec.subscribe(msgid, [(f"home/{room}/cmd", int(rng.integers(0, 2)))]))
            msgid += 1
            last = t
        if publishes is None:
            times = []
            u = t
            while True:
                u += float(rng.exponential(1.0 / publish_rate))
                if u >= start + duration:
                    break
                times.append(u)
        else:
            times = list(t + np.cumsum(rng.exponential(1.0 / publish_rate, size=publishes)))
        for u in times:
            # Keepalive pings across long idle gaps.
            while u - last > 0.75 * keepalive:
                last += 0.75 * keepalive
                s.add(last, conn, codec.pingreq())
            if rng.random() < qos1_fraction:
                frame = codec.publish(topic, _reading(rng, sensor), qos=1, message_id=msgid)
                msgid = msgid % 65535 + 1
            else:
                frame = codec.publish(topic, _reading(rng, sensor))
            s.add(u, conn, frame)
            last = u
        s.add(last + float(rng.uniform(0.05, 1.0)), conn, codec.disconnect())
    return s.packets


def gen_slowite(connections: int = 50, seed: int = 0, start: float = 0.0, pings: int = 0,
                idle_window: float = 60.0) -> list[SimPacket]:
    """Many connections opened with the maximal keepalive, then (almost) silent."""
    rng = np.random.default_rng(seed)
    s = _Stream(ClassLabel.SLOWITE)
    t = start
    conns = []
    for i in range(connections):
        t += float(rng.exponential(0.01))
        conn = f"10.0.2.10:{20000 + i}"
        conns.append(conn)
        s.add(t, conn, codec.connect(f"slow{i:05d}", keepalive=65535))
    # Optional pings, spaced so the aggregate stays at or below 1 packet/s.
    gap = max(1.0, idle_window / max(pings, 1))
    for k in range(pings):
        t += gap
        s.add(t, conns[k % len(conns)], codec.pingreq())
    return s.packets


def gen_flood(publishes: int = 2000, seed: int = 0, start: float = 0.0,
              payload_min: int = 1024, payload_max: int = 8192, mean_gap: float = 2e-4) -> list[SimPacket]:
    """One connection emitting large PUBLISH frames back to back."""
    rng = np.random.default_rng(seed)
    s = _Stream(ClassLabel.FLOOD)
    conn = "10.0.3.7:31337"
    t = start
    s.add(t, conn, codec.connect("flooder", keepalive=60))
    for _ in range(publishes):
        t += float(rng.exponential(mean_gap))
        size = int(rng.integers(payload_min, payload_max + 1))
        s.add(t, conn, codec.publish("home/flood", rng.bytes(size)))
    return s.packets


MALFORMATIONS = ("invalid-type", "qos3", "bad-flags", "bad-utf8", "overrun", "ping-body", "bad-version",
                 "reserved-connect-flag")


def malformed_frame(kind: str, rng: np.random.Generator) -> bytes:
    """A self-delimiting frame that the parser must reject (declared length is honest)."""
    topic = f"home/{_ROOMS[int(rng.integers(len(_ROOMS)))]}/x".encode()
    payload = rng.bytes(int(rng.integers(1, 64)))
    if kind == "invalid-type":
        return codec.raw_frame(int(rng.choice([0, 15])), int(rng.integers(16)), payload)
    if kind == "qos3":
        return codec.raw_frame(codec.PUBLISH, 0b0110, struct.pack(">H", len(topic)) + topic + b"\x00\x01" + payload)
    if kind == "bad-flags":
        return codec.raw_frame(codec.SUBSCRIBE, 0, b"\x00\x01" + struct.pack(">H", len(topic)) + topic + b"\x00")
    if kind == "bad-utf8":
        bad = b"\xff\xfe" + topic
        return codec.raw_frame(codec.PUBLISH, 0, struct.pack(">H", len(bad)) + bad + payload)
    if kind == "overrun":
        return codec.raw_frame(codec.PUBLISH, 0, struct.pack(">H", 0x7FFF) + topic)
    if kind == "ping-body":
        return codec.raw_frame(codec.PINGREQ, 0, payload)
    if kind == "bad-version":
        body = struct.pack(">H", 4) + b"MQTT" + bytes([int(rng.integers(5, 256)), 2]) + b"\x00\x3c" + b"\x00\x00"
        return codec.raw_frame(codec.CONNECT, 0, body)
    if kind == "reserved-connect-flag":
        body = struct.pack(">H", 4) + b"MQTT" + bytes([4, 0x03]) + b"\x00\x3c" + b"\x00\x00"
        return codec.raw_frame(codec.CONNECT, 0, body)
    raise ValueError(f"unknown malformation {kind!r}")


def gen_malformed(frames: int = 300, corruption_rate: float = 1.0, seed: int = 0, start: float = 0.0,
                  connections: int = 3, mean_gap: float = 0.05) -> list[SimPacket]:
    """Frames with corrupted type, flags, length or UTF-8 fields.

    Uncorrupted slots carry ordinary PUBLISH frames (still labeled malformed,
    since they belong to the attacking session).
    """
    if not 0.0 <= corruption_rate <= 1.0:
        raise ValueError("corruption_rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    s = _Stream(ClassLabel.MALFORMED)
    t = start
    for i in range(frames):
        t += float(rng.exponential(mean_gap))
        conn = f"10.0.4.{i % connections + 1}:{25000 + i % connections}"
        if rng.random() < corruption_rate:
            kind = MALFORMATIONS[int(rng.integers(len(MALFORMATIONS)))]
            s.add(t, conn, malformed_frame(kind, rng))
        else:
            s.add(t, conn, codec.publish("home/lab/x", rng.bytes(int(rng.integers(1, 64)))))
    return s.packets


_USERS = ("admin", "root", "user", "mqtt", "guest", "pi", "iot", "device")
_PASSWORDS = ("123456", "password", "admin", "root", "qwerty", "letmein", "mqtt", "raspberry",
              "iloveyou", "dragon", "111111", "abc123", "changeme", "secret", "toor", "default")


def gen_bruteforce(attempts: int = 200, seed: int = 0, start: float = 0.0, mean_gap: float = 0.02) -> list[SimPacket]:
    """Credentialed CONNECT attempts cycling user/password candidates, one connection each."""
    rng = np.random.default_rng(seed)
    s = _Stream(ClassLabel.BRUTEFORCE)
    t = start
    for i in range(attempts):
        t += float(rng.exponential(mean_gap))
        user = _USERS[(i // len(_PASSWORDS)) % len(_USERS)]
        pw = _PASSWORDS[i % len(_PASSWORDS)]
        s.add(t, f"10.0.5.66:{45000 + i}", codec.connect(f"bf{i:05d}", keepalive=60, username=user,
                                                        password=pw.encode()))
    return s.packets


def gen_dos(sources: int = 20, rounds: int = 5, burst: int = 10, seed: int = 0, start: float = 0.0,
            mean_gap: float = 1e-3) -> list[SimPacket]:
    """Connection churn from many sources: connect, burst of QoS 1 publishes, disconnect, repeat."""
    rng = np.random.default_rng(seed)
    s = _Stream(ClassLabel.DOS)
    t = start
    port = 50000
    for _ in range(rounds):
        for src in range(sources):
            conn = f"10.1.{src // 250}.{src % 250 + 1}:{port}"
            port += 1
            t += float(rng.exponential(mean_gap))
            s.add(t, conn, codec.connect(f"d{port}", keepalive=0))
            for m in range(burst):
                t += float(rng.exponential(mean_gap))
                size = int(rng.integers(256, 1024))
                s.add(t, conn, codec.publish("home/dos", rng.bytes(size), qos=1, message_id=m + 1))
            t += float(rng.exponential(mean_gap))
            s.add(t, conn, codec.disconnect())
    return s.packets


def gen_attack(kind: ClassLabel, seed: int = 0, **knobs) -> list[SimPacket]:
    kind = ClassLabel(kind)
    gens = {
        ClassLabel.SLOWITE: gen_slowite,
        ClassLabel.FLOOD: gen_flood,
        ClassLabel.MALFORMED: gen_malformed,
        ClassLabel.BRUTEFORCE: gen_bruteforce,
        ClassLabel.DOS: gen_dos,
    }
    if kind not in gens:
        raise ValueError("gen_attack needs one of the five attack classes")
    return gens[kind](seed=seed, **knobs)


def interleave(*streams: Iterable[SimPacket]) -> list[SimPacket]:
    """Merge streams by timestamp; ties keep stream order."""
    merged = [p for s in streams for p in s]
    return sorted(merged, key=lambda p: p.time)


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    duration: float = 60.0
    clients: int = 10
    publish_rate: float = 1.0
    classes: tuple[ClassLabel, ...] = tuple(ClassLabel)
    seed: int = 0
    slowite_connections: int = 50
    flood_publishes: int = 2000
    bruteforce_attempts: int = 200
    malformed_frames: int = 300
    corruption_rate: float = 1.0
    dos_sources: int = 20
    dos_rounds: int = 5
    legit_credential_fraction: float = 0.0

    def __post_init__(self):
        if not self.classes:
            raise ValueError("a scenario needs at least one traffic class")

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)


PRESETS: dict[str, Scenario] = {
    "all-attacks": Scenario(name="all-attacks"),
    "legitimate-only": Scenario(name="legitimate-only", classes=(ClassLabel.LEGITIMATE,), clients=40),
    **{
        lab.dataset_name: Scenario(name=lab.dataset_name, classes=(lab,))
        for lab in ClassLabel
        if lab.is_attack
    },
}


def generate(scenario: Scenario) -> list[SimPacket]:
    """All enabled streams for `scenario`, interleaved.  Each class draws from
    its own child seed, so toggling one class leaves the others unchanged."""
    seeds = np.random.SeedSequence(scenario.seed).spawn(len(ClassLabel))
    s = {lab: int(seeds[int(lab)].generate_state(1)[0]) for lab in ClassLabel}
    d = scenario.duration
    streams = []
    rng = np.random.default_rng(scenario.seed)
    starts = {lab: float(rng.uniform(0, d / 2)) for lab in ClassLabel}
    for lab in scenario.classes:
        if lab is ClassLabel.LEGITIMATE:
            streams.append(gen_legitimate(scenario.clients, scenario.publish_rate, s[lab], duration=d,
                                          credential_fraction=scenario.legit_credential_fraction))
        elif lab is ClassLabel.SLOWITE:
            streams.append(gen_slowite(scenario.slowite_connections, s[lab], start=starts[lab]))
        elif lab is ClassLabel.FLOOD:
            streams.append(gen_flood(scenario.flood_publishes, s[lab], start=starts[lab]))
        elif lab is ClassLabel.BRUTEFORCE:
            streams.append(gen_bruteforce(scenario.bruteforce_attempts, s[lab], start=starts[lab]))
        elif lab is ClassLabel.MALFORMED:
            streams.append(gen_malformed(scenario.malformed_frames, scenario.corruption_rate, s[lab],
                                         start=starts[lab]))
        elif lab is ClassLabel.DOS:
            streams.append(gen_dos(scenario.dos_sources, scenario.dos_rounds, seed=s[lab], start=starts[lab]))
    return interleave(*streams)
