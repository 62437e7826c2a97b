"""Drive generated traffic through the gateway and score dispositions against ground truth."""

from __future__ import annotations

import json
import socket
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..engine import Blocked, Conn, Engine, Intercepted, IpsAction, map_response
from ..schema import ClassLabel, N_CLASSES
from .generators import SimPacket

BLOCKED_COLUMN = N_CLASSES
COLUMN_NAMES = [lab.dataset_name for lab in ClassLabel] + ["blocked"]


@dataclass
class ScoreReport:
    """Confusion of true class (rows) against predicted class or firewall block (columns)."""

    confusion: np.ndarray
    actions: dict[ClassLabel, Counter]
    latencies_us: list[float]
    emitted: int
    delivered: int
    relay_failures: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def processed(self) -> int:
        return int(self.confusion.sum())

    def recall(self, label: ClassLabel) -> float | None:
        row = self.confusion[int(label)]
        return float(row[int(label)] / row.sum()) if row.sum() else None

    def precision(self, label: ClassLabel) -> float | None:
        col = self.confusion[:, int(label)]
        return float(col[int(label)] / col.sum()) if col.sum() else None

    @property
    def false_positive_rate(self) -> float | None:
        """Share of legitimate packets that were not forwarded."""
        row = self.confusion[int(ClassLabel.LEGITIMATE)]
        total = row.sum()
        return float((total - row[int(ClassLabel.LEGITIMATE)]) / total) if total else None

    def action_conformance(self) -> dict[ClassLabel, bool]:
        """Per detected attack class: every observed action equals the response table."""
        out = {}
        for lab, counts in self.actions.items():
            if lab.is_attack and counts:
                out[lab] = set(counts) == {map_response(lab).value}
        return out

    def latency_percentiles(self) -> dict[str, float]:
        if not self.latencies_us:
            return {}
        a = np.asarray(self.latencies_us)
        return {f"p{q}": float(np.percentile(a, q)) for q in (50, 90, 99)}

    def as_dict(self) -> dict:
        return {
            "emitted": self.emitted,
            "delivered": self.delivered,
            "processed": self.processed,
            "relay_failures": self.relay_failures,
            "columns": COLUMN_NAMES,
            "confusion": self.confusion.tolist(),
            "recall": {lab.dataset_name: self.recall(lab) for lab in ClassLabel},
            "precision": {lab.dataset_name: self.precision(lab) for lab in ClassLabel},
            "false_positive_rate": self.false_positive_rate,
            "actions": {lab.dataset_name: dict(c) for lab, c in self.actions.items()},
            "action_conformance": {lab.dataset_name: ok for lab, ok in self.action_conformance().items()},
            "latency_us": self.latency_percentiles(),
            **({"meta": self.meta} if self.meta else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=False)

    def to_text(self) -> str:
        lines = [f"packets emitted {self.emitted}, delivered {self.delivered}, scored {self.processed}"]
        w = max(len(c) for c in COLUMN_NAMES) + 1
        lines.append("true\\pred".ljust(w) + "".join(c.rjust(w) for c in COLUMN_NAMES))
        for lab in ClassLabel:
            row = self.confusion[int(lab)]
            lines.append(lab.dataset_name.ljust(w) + "".join(str(int(v)).rjust(w) for v in row))
        for lab in ClassLabel:
            r, p = self.recall(lab), self.precision(lab)
            if r is None and p is None:
                continue
            fmt = lambda v: "n/a" if v is None else f"{v:.4f}"
            lines.append(f"{lab.dataset_name}: recall {fmt(r)} precision {fmt(p)}")
        fpr = self.false_positive_rate
        if fpr is not None:
            lines.append(f"false positive rate {fpr:.4f}")
        for lab, counts in self.actions.items():
            if counts:
                lines.append(f"{lab.dataset_name} actions: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
        pct = self.latency_percentiles()
        if pct:
            lines.append("latency us: " + " ".join(f"{k}={v:.1f}" for k, v in pct.items()))
        return "\n".join(lines) + "\n"


def _column(disposition) -> int:
    if isinstance(disposition, Blocked):
        return BLOCKED_COLUMN
    return int(disposition.label)


class _Tally:
    def __init__(self):
        self.cm = np.zeros((N_CLASSES, N_CLASSES + 1), dtype=np.int64)
        self.actions: dict[ClassLabel, Counter] = defaultdict(Counter)
        self.relay_failures = 0

    def add(self, truth: ClassLabel, col: int, action: str | None) -> None:
        self.cm[int(truth), col] += 1
        if col < N_CLASSES and col == int(truth) and action is not None:
            self.actions[truth][action] += 1


def run_in_process(packets: Sequence[SimPacket], engine: Engine) -> ScoreReport:
    """Feed packets to the engine on the virtual clock.

    A reset or ban closes the connection, so later packets on it are never
    delivered; they count as emitted but not scored.
    """
    tally = _Tally()
    closed: set[str] = set()
    latencies = []
    delivered = 0
    for p in packets:
        if p.conn_id in closed:
            continue
        delivered += 1
        t0 = time.perf_counter()
        d = engine.process_packet(Conn.from_id(p.conn_id), p.frame, p.time)
        latencies.append((time.perf_counter() - t0) * 1e6)
        action = d.action.value if isinstance(d, Intercepted) else None
        tally.add(p.label, _column(d), action)
        if isinstance(d, Intercepted) and d.action is IpsAction.RESET_CONNECTION:
            closed.add(p.conn_id)
        elif isinstance(d, Blocked) and d.reason.value != "rate-limit":
            closed.add(p.conn_id)
    return ScoreReport(tally.cm, dict(tally.actions), latencies, len(packets), delivered)


def _source_for(ip: str, mapping: dict[str, str]) -> str:
    # Synthetic sources map onto distinct loopback addresses so per-IP rules still apply.
    if ip not in mapping:
        n = len(mapping) + 2
        mapping[ip] = f"127.{(n >> 16) & 255}.{(n >> 8) & 255}.{n & 255}"
    return mapping[ip]


def run_over_tcp(
    packets: Sequence[SimPacket],
    endpoint: tuple[str, int],
    event_log: str | Path,
    time_scale: float = 1.0,
    settle: float = 2.0,
    connect_timeout: float = 5.0,
) -> ScoreReport:
    """Send packets through a running gateway and join its event log with ground truth.

    Packets are paced on the scenario clock divided by `time_scale`.  Each
    synthetic connection opens its own socket; events are matched to packets by
    connection id and per-connection order.
    """
    event_log = Path(event_log)
    start_offset = event_log.stat().st_size if event_log.exists() else 0
    sockets: dict[str, socket.socket] = {}
    local_ids: dict[str, str] = {}
    sent: dict[str, list[SimPacket]] = defaultdict(list)
    dead: set[str] = set()
    sources: dict[str, str] = {}
    t0 = time.monotonic()
    base = packets[0].time if packets else 0.0
    for p in packets:
        if p.conn_id in dead:
            continue
        due = (p.time - base) / time_scale
        lag = due - (time.monotonic() - t0)
        if lag > 0:
            time.sleep(lag)
        s = sockets.get(p.conn_id)
        if s is None:
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            s.settimeout(connect_timeout)
            try:
                s.bind((_source_for(p.source, sources), 0))
                s.connect(endpoint)
            except OSError as exc:
                s.close()
                if not sockets:
                    raise ConnectionError(f"gateway unreachable at {endpoint[0]}:{endpoint[1]}: {exc}") from None
                dead.add(p.conn_id)
                continue
            s.setblocking(False)
            sockets[p.conn_id] = s
            host, port = s.getsockname()
            local_ids[f"{host}:{port}"] = p.conn_id
        try:
            s.sendall(p.frame)
            sent[p.conn_id].append(p)
        except (BlockingIOError, OSError):
            dead.add(p.conn_id)
    time.sleep(settle / 2)
    for s in sockets.values():
        try:
            s.close()
        except OSError:
            pass
    events = _wait_for_events(event_log, start_offset, settle)
    tally = _Tally()
    latencies = []
    position: dict[str, int] = defaultdict(int)
    for ev in events:
        sim_conn = local_ids.get(ev.get("conn"))
        if sim_conn is None:
            continue
        if ev["disposition"] == "relay-failed":
            tally.relay_failures += 1
            continue
        i = position[sim_conn]
        position[sim_conn] += 1
        if i >= len(sent[sim_conn]):
            continue
        p = sent[sim_conn][i]
        if ev["disposition"].startswith("blocked"):
            col = BLOCKED_COLUMN
        else:
            col = int(ClassLabel.from_string(ev["label"]))
        tally.add(p.label, col, ev.get("action"))
        if ev.get("latency_us") is not None:
            latencies.append(float(ev["latency_us"]))
    delivered = sum(position.values())
    report = ScoreReport(tally.cm, dict(tally.actions), latencies, len(packets), delivered, tally.relay_failures)
    report.meta["mode"] = "tcp"
    return report


def _wait_for_events(path: Path, offset: int, settle: float) -> list[dict]:
    """Read new event records once the log stops growing."""
    deadline = time.monotonic() + max(settle, 0.5) * 5
    last = -1
    while time.monotonic() < deadline:
        size = path.stat().st_size if path.exists() else 0
        if size == last:
            break
        last = size
        time.sleep(max(settle / 4, 0.1))
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        fh.seek(offset)
        return [json.loads(line) for line in fh if line.strip()]


def run_scenario(packets: Sequence[SimPacket], gateway) -> ScoreReport:
    """Score against an in-process `Engine`, or a ``(host, port, event_log)`` endpoint."""
    if isinstance(gateway, Engine):
        return run_in_process(packets, gateway)
    host, port, log_path = gateway
    return run_over_tcp(packets, (host, port), log_path)

