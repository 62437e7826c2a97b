"""Analytical transfer latency between an edge node and a fog server.

Each data packet is sent with an RTS/CTS exchange::

    DIFS | RTS | SIFS | CTS | SIFS | DATA | SIFS | ACK

RTS, CTS and ACK are wireless control frames sent at the control rate.  TCP
control segments (REQ, ACK, GET, FIN) go through the same exchange as data
packets, sized at `sctcp` bytes.  Node delay counts every data and TCP control
packet once at the client and once at the server.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

DEFAULTS_FILE = "latency_defaults.txt"


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyParams:
    distance: float
    propagation_speed: float
    pprc: float
    pprs: float
    sifs: float
    difs: float
    data_rate: float
    control_rate: float
    swc: int
    tcph: int
    iph: int
    wh: int
    sctcp: int
    mplw: int
    tcp_control_signals: int

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ParamError(f"{f.name} must be positive")
        if self.mplw <= self.wh + self.iph + self.tcph:
            raise ParamError("mplw must exceed the wireless, IP and TCP headers")

    @property
    def payload_per_packet(self) -> int:
        return self.mplw - self.wh - self.iph - self.tcph


@dataclass(frozen=True)
class TlsParams:
    client_hello: int
    server_hello: int
    per_certificate: int
    chain_length: int
    client_key_exchange: int
    finished: int
    handshake_header: int
    record_header: int
    tls_messages: int

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ParamError(f"{f.name} must be non-negative")
        if self.chain_length < 1:
            raise ParamError("chain_length must be at least 1")

    # ClientHello, ServerHello, Certificate, ServerHelloDone, ClientKeyExchange,
    # and one Finished per side carry a handshake header.
    HANDSHAKE_MESSAGES = 7

    def handshake_bytes(self) -> int:
        body = (
            self.client_hello
            + self.server_hello
            + self.per_certificate * self.chain_length
            + self.client_key_exchange
            + 2 * self.finished
        )
        return body + self.HANDSHAKE_MESSAGES * self.handshake_header + self.tls_messages * self.record_header


def parse_params(text: str) -> dict[str, float]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParamError(f"line {lineno}: expected key = value")
        try:
            values[key.strip()] = float(value)
        except ValueError:
            raise ParamError(f"line {lineno}: {value.strip()!r} is not a number") from None
    return values


def _build(cls, values: dict[str, float]):
    kwargs = {}
    for f in fields(cls):
        if f.name not in values:
            raise ParamError(f"missing parameter {f.name}")
        v = values[f.name]
        kwargs[f.name] = int(v) if f.type == "int" and float(v).is_integer() else v
    return cls(**kwargs)


def load_params(path: str | Path | None = None, overrides: dict[str, float] | None = None):
    """Return (LatencyParams, TlsParams) from the shipped defaults, a file, and overrides."""
    text = resources.files("edgeguard").joinpath("data", DEFAULTS_FILE).read_text()
    values = parse_params(text)
    if path is not None:
        values.update(parse_params(Path(path).read_text()))
    if overrides:
        unknown = set(overrides) - set(values)
        if unknown:
            raise ParamError(f"unknown parameters: {sorted(unknown)}")
        values.update(overrides)
    return _build(LatencyParams, values), _build(TlsParams, values)


def num_packets(file_size: int, p: LatencyParams) -> int:
    if file_size <= 0:
        raise ValueError("file size must be positive")
    return -(-file_size // p.payload_per_packet)


def per_packet_processing(p: LatencyParams) -> float:
    return 1 / p.pprc + 1 / p.pprs


def node_delay(n_data: int, n_ctrl: int, p: LatencyParams) -> float:
    if n_data < 0 or n_ctrl < 0:
        raise ValueError("packet counts must be non-negative")
    return (n_data + n_ctrl) * per_packet_processing(p)


def packet_delay(length: float, rate: float, p: LatencyParams) -> float:
    if length <= 0:
        raise ValueError("packet length must be positive")
    return length * 8 / rate + p.distance / p.propagation_speed


def exchange_delay(length: float, p: LatencyParams) -> float:
    """One RTS/CTS protected frame of `length` bytes at the data rate."""
    ctrl = packet_delay(p.swc, p.control_rate, p)
    return p.difs + ctrl + p.sifs + ctrl + p.sifs + packet_delay(length, p.data_rate, p) + p.sifs + ctrl


def network_delay(n_data: int, p: LatencyParams, n_ctrl: int = 0, tail_bytes: int | None = None) -> float:
    """Wireless time for `n_data` full packets plus `n_ctrl` TCP control segments.

    With `tail_bytes` set, the last data packet carries only that much payload.
    """
    if n_data < 0 or n_ctrl < 0:
        raise ValueError("packet counts must be non-negative")
    full = n_data
    total = 0.0
    if tail_bytes is not None and n_data > 0:
        full -= 1
        total += exchange_delay(tail_bytes + p.wh + p.iph + p.tcph, p)
    return total + full * exchange_delay(p.mplw, p) + n_ctrl * exchange_delay(p.sctcp, p)


@dataclass
class LatencyBreakdown:
    file_size: int
    n_data_packets: int
    n_ctrl: int
    node_delay: float
    network_delay: float
    trace: list[str] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.node_delay + self.network_delay


def tcp_latency(file_size: int, p: LatencyParams) -> LatencyBreakdown:
    n = num_packets(file_size, p)
    tail = file_size - (n - 1) * p.payload_per_packet
    n_ctrl = p.tcp_control_signals
    nd = node_delay(n, n_ctrl, p)
    full_ex = exchange_delay(p.mplw, p)
    tail_ex = exchange_delay(tail + p.wh + p.iph + p.tcph, p)
    ctrl_ex = exchange_delay(p.sctcp, p)
    wd = network_delay(n, p, n_ctrl, tail_bytes=tail)
    trace = [
        f"file_size_bytes = {file_size}",
        f"payload_per_packet_bytes = {p.payload_per_packet}",
        f"data_packets = {n}",
        f"tail_payload_bytes = {tail}",
        f"tcp_control_signals = {n_ctrl}",
        f"node_delay_s = {nd:.9f}  ({n} + {n_ctrl}) x {per_packet_processing(p):.9f}",
        f"full_packet_exchange_s = {full_ex:.9f}",
        f"tail_packet_exchange_s = {tail_ex:.9f}",
        f"control_exchange_s = {ctrl_ex:.9f}",
        f"network_delay_s = {wd:.9f}",
        f"total_s = {nd + wd:.9f}",
    ]
    return LatencyBreakdown(file_size, n, n_ctrl, nd, wd, trace)


def tls_overhead(t: TlsParams, p: LatencyParams) -> float:
    """Session setup cost: handshake bytes on the air, per-message processing, one round trip."""
    return (
        t.handshake_bytes() * 8 / p.data_rate
        + t.tls_messages * per_packet_processing(p)
        + 2 * p.distance / p.propagation_speed
    )


@dataclass(frozen=True)
class CurveRow:
    size: int
    tcp: float
    tls: float


def latency_curve(sizes: Sequence[int], p: LatencyParams, t: TlsParams) -> list[CurveRow]:
    if not sizes:
        raise ValueError("no file sizes given")
    overhead = tls_overhead(t, p)
    rows = []
    for s in sizes:
        tcp = tcp_latency(s, p).total
        rows.append(CurveRow(s, tcp, tcp + overhead))
    return rows


CURVE_HEADER = ("size_bytes", "tcp_latency_s", "tls_latency_s")


def curve_csv(rows: Iterable[CurveRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for r in rows:
        w.writerow([r.size, repr(r.tcp), repr(r.tls)])
    return buf.getvalue()


def read_curve_csv(text: str) -> list[CurveRow]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CURVE_HEADER:
        raise ValueError(f"unexpected header {header}")
    return [CurveRow(int(a), float(b), float(c)) for a, b, c in reader]


_SIZE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(B|KB|MB|GB)?\s*$", re.IGNORECASE)
_UNITS = {"B": 1, "KB": 1024, "MB": 1024**2, "GB": 1024**3}


def parse_size(text: str) -> int:
    """`497KB` -> 508928.  Units are binary multiples."""
    m = _SIZE.match(text)
    if not m:
        raise ValueError(f"bad size {text!r}")
    value = float(m.group(1)) * _UNITS[(m.group(2) or "B").upper()]
    if not value.is_integer() or value <= 0:
        raise ValueError(f"size {text!r} is not a positive whole number of bytes")
    return int(value)


def without_node_processing(p: LatencyParams) -> LatencyParams:
    return replace(p, pprc=math.inf, pprs=math.inf)
