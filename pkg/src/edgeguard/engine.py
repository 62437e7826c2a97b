"""Edge inspection pipeline: firewall, parse, extract, classify, respond, log."""

from __future__ import annotations

import csv
import enum
import errno
import hashlib
import io
import json
import logging
import os
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, TextIO

from .firewall import Block, BlockReason, Firewall
from .mqtt import codec
from .mqtt.codec import MalformedFrame, Reason
from .mqtt.features import ConnTable, PacketFeatures, SchemaMismatch, extract_features, preprocess
from .schema import FEATURE_COLUMNS, MQTT_SCHEMA_HASH, TARGET_COLUMN, ClassLabel
from .ml.tree import predict_label

log = logging.getLogger(__name__)


class IpsAction(enum.Enum):
    DROP_PACKET = "drop"
    RESET_CONNECTION = "reset"
    FORWARD_TO_SOURCE = "forward-to-source"


RESPONSE_TABLE: dict[ClassLabel, IpsAction] = {
    ClassLabel.DOS: IpsAction.DROP_PACKET,
    ClassLabel.SLOWITE: IpsAction.RESET_CONNECTION,
    ClassLabel.FLOOD: IpsAction.FORWARD_TO_SOURCE,
    ClassLabel.MALFORMED: IpsAction.DROP_PACKET,
    ClassLabel.BRUTEFORCE: IpsAction.RESET_CONNECTION,
}


def map_response(label: ClassLabel) -> IpsAction:
    label = ClassLabel(label)
    if label is ClassLabel.LEGITIMATE:
        raise ValueError("legitimate traffic has no IPS response")
    return RESPONSE_TABLE[label]


@dataclass(frozen=True)
class Forwarded:
    label: ClassLabel = ClassLabel.LEGITIMATE
    marker = "forwarded"


@dataclass(frozen=True)
class Blocked:
    reason: BlockReason

    @property
    def marker(self) -> str:
        return f"blocked:{self.reason.value}"


@dataclass(frozen=True)
class Intercepted:
    label: ClassLabel
    action: IpsAction

    def __post_init__(self):
        if self.label is ClassLabel.LEGITIMATE:
            raise ValueError("an intercepted packet cannot be legitimate")

    @property
    def marker(self) -> str:
        return f"intercepted:{self.action.value}"


@dataclass(frozen=True)
class RelayFailed:
    """A legitimate packet that could not be delivered to the broker."""

    detail: str = ""
    label: ClassLabel = ClassLabel.LEGITIMATE
    marker = "relay-failed"


Disposition = Forwarded | Blocked | Intercepted | RelayFailed


@dataclass(frozen=True)
class Conn:
    conn_id: str
    src_ip: str
    dst_port: int = 1883

    @classmethod
    def from_id(cls, conn_id: str, dst_port: int = 1883) -> "Conn":
        host, sep, _ = conn_id.rpartition(":")
        return cls(conn_id, host if sep else conn_id, dst_port)


class LogSuspended(OSError):
    """Raised by rotation when the disk is full and logging is suspended."""


@dataclass(frozen=True)
class SealedFile:
    path: Path
    sequence: int
    records: int
    sha256: str


LOG_HEADER = (*FEATURE_COLUMNS, TARGET_COLUMN, "disposition")


class FeatureLog:
    """Append-only CSV of feature records, rotated into sealed read-only files.

    The live file is ``features-current.csv``; sealing renames it to
    ``features-NNNNNN.csv`` with a ``.sha256`` sidecar.
    """

    def __init__(self, directory: str | Path, rotation_period: float = 7 * 86400.0, now: float | None = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.rotation_period = float(rotation_period)
        self._lock = threading.Lock()
        self.sealed: deque[SealedFile] = deque()
        self.records_written = 0
        self.records_dropped = 0
        self.suspended = False
        self._sequence = self._last_sequence()
        self._fh: TextIO | None = None
        self._current_records = 0
        self._open(time.time() if now is None else now)

    @property
    def live_path(self) -> Path:
        return self.directory / "features-current.csv"

    @property
    def current_records(self) -> int:
        return self._current_records

    @property
    def sequence(self) -> int:
        return self._sequence

    def _last_sequence(self) -> int:
        seqs = [int(p.stem.split("-")[1]) for p in self.directory.glob("features-[0-9]*.csv")]
        return max(seqs, default=0)

    def _open(self, now: float) -> None:
        self.opened_at = now
        self._current_records = 0
        try:
            exists = self.live_path.exists() and self.live_path.stat().st_size > 0
            self._fh = open(self.live_path, "a", newline="", encoding="utf-8")
            if exists:
                # Resume a live file left by a previous run.
                with open(self.live_path, encoding="utf-8") as fh:
                    self._current_records = max(0, sum(1 for _ in fh) - 1)
            else:
                self._write(_csv_line(LOG_HEADER))
            self.suspended = False
        except OSError as exc:
            if exc.errno != errno.ENOSPC:
                raise
            self._suspend(exc)

    def _write(self, line: str) -> None:
        self._fh.write(line)
        self._fh.flush()

    def _suspend(self, exc: OSError) -> None:
        if not self.suspended:
            log.error("feature log suspended: %s", exc)
        self.suspended = True

    def append(self, features: PacketFeatures, label: ClassLabel | None, marker: str) -> bool:
        line = _csv_line((*features.values, label.dataset_name if label is not None else "", marker))
        with self._lock:
            if self.suspended or self._fh is None:
                self.records_dropped += 1
                return False
            try:
                self._write(line)
            except OSError as exc:
                if exc.errno != errno.ENOSPC:
                    raise
                self._suspend(exc)
                self.records_dropped += 1
                return False
            self.records_written += 1
            self._current_records += 1
            return True

    def due(self, now: float) -> bool:
        return now - self.opened_at >= self.rotation_period

    def rotate(self, now: float, force: bool = False) -> SealedFile | None:
        """Seal the live file if the period has elapsed (or `force`), then reopen."""
        with self._lock:
            if not force and not self.due(now):
                return None
            if not force and self._current_records == 0:
                # Nothing to ship; start a fresh period instead of sealing an empty file.
                self.opened_at = now
                return None
            if self.suspended:
                raise LogSuspended(errno.ENOSPC, "feature log is suspended (disk full)")
            self._fh.close()
            self._fh = None
            self._sequence += 1
            target = self.directory / f"features-{self._sequence:06d}.csv"
            os.replace(self.live_path, target)
            digest = hashlib.sha256(target.read_bytes()).hexdigest()
            sidecar = target.with_suffix(".csv.sha256")
            sidecar.write_text(f"{digest}  {target.name}\n", encoding="ascii")
            for p in (target, sidecar):
                os.chmod(p, 0o444)
            sealed = SealedFile(target, self._sequence, self._current_records, digest)
            self.sealed.append(sealed)
            self._open(now)
            return sealed

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def _csv_line(cells) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(cells)
    return buf.getvalue()


def verify_sealed(path: str | Path) -> bool:
    path = Path(path)
    sidecar = path.with_suffix(".csv.sha256")
    expected = sidecar.read_text(encoding="ascii").split()[0]
    return hashlib.sha256(path.read_bytes()).hexdigest() == expected


class EventLog:
    """JSON-lines record per disposition."""

    def __init__(self, path: str | Path | None = None, stream: TextIO | None = None):
        self._lock = threading.Lock()
        self._fh = stream
        self._owned = False
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "a", encoding="utf-8")
            self._owned = True

    def emit(self, record: dict) -> None:
        if self._fh is None:
            return
        line = json.dumps(record, separators=(",", ":")) + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()

    def close(self) -> None:
        if self._owned and self._fh is not None:
            self._fh.close()
            self._fh = None


@dataclass
class ActiveModel:
    model: object
    tag: object = None

    @property
    def counter(self) -> int | None:
        return getattr(self.tag, "counter", None)


class ModelRefused(SchemaMismatch):
    pass


def check_model_schema(model) -> None:
    if getattr(model, "schema_hash", None) != MQTT_SCHEMA_HASH:
        raise ModelRefused("model schema hash does not match the MQTT feature schema")
    unknown = [n for n in model.feature_names if n not in FEATURE_COLUMNS]
    if unknown:
        raise ModelRefused(f"model uses columns outside the feature schema: {unknown}")


@dataclass
class EngineCounters:
    processed: int = 0
    dispositions: Counter = field(default_factory=Counter)
    labels: Counter = field(default_factory=Counter)
    relay_failures: int = 0
    swaps: int = 0
    refused_swaps: int = 0


class Engine:
    """Per-packet decision pipeline shared by the proxy and the simulator.

    `process_packet` takes one client-to-broker frame and returns exactly one
    disposition.  The model and rule set are read once per packet from
    swap-atomic references.
    """

    def __init__(
        self,
        model,
        firewall: Firewall | None = None,
        feature_log: FeatureLog | None = None,
        event_log: EventLog | None = None,
        tag=None,
        reflect_flood: bool = True,
        idle_timeout: float = 600.0,
        probe: Callable[[str, str], None] | None = None,
    ):
        check_model_schema(model)
        self._active = ActiveModel(model, tag)
        self._swap_lock = threading.Lock()
        self.firewall = firewall or Firewall()
        self.feature_log = feature_log
        self.event_log = event_log or EventLog()
        self.reflect_flood = reflect_flood
        self.conns = ConnTable(idle_timeout)
        self.counters = EngineCounters()
        self._count_lock = threading.Lock()
        self.probe = probe

    @property
    def model(self):
        return self._active.model

    @property
    def active(self) -> ActiveModel:
        return self._active

    def swap_model(self, model, tag=None):
        """Install `model`; returns the previous one.  Refuses other schemas."""
        try:
            check_model_schema(model)
        except ModelRefused as exc:
            with self._count_lock:
                self.counters.refused_swaps += 1
            self.event_log.emit({"ts": time.time(), "event": "swap-refused", "detail": str(exc)})
            log.error("model swap refused: %s", exc)
            raise
        with self._swap_lock:
            previous = self._active
            self._active = ActiveModel(model, tag)
        with self._count_lock:
            self.counters.swaps += 1
        self.event_log.emit({"ts": time.time(), "event": "model-swap", "counter": self._active.counter})
        return previous.model

    def respond(self, label: ClassLabel) -> IpsAction:
        action = map_response(label)
        if action is IpsAction.FORWARD_TO_SOURCE and not self.reflect_flood:
            return IpsAction.DROP_PACKET
        return action

    def _probe(self, stage: str, conn_id: str) -> None:
        if self.probe is not None:
            self.probe(stage, conn_id)

    def process_packet(self, conn: Conn, data: bytes, now: float, tcp_flags: int | None = None) -> Disposition:
        started = time.perf_counter()
        state = self.conns.get(conn.src_ip, conn.conn_id, now)
        initiating = state.packets == 0
        self._probe("firewall", conn.conn_id)
        verdict = self.firewall.check(conn.src_ip, conn.dst_port, now, initiating=initiating)

        item, used = codec.parse_frame(data, eof=True)
        if used < len(data):
            item = MalformedFrame(Reason.PROTOCOL, bytes(data), data[0] >> 4, data[0] & 0x0F,
                                  None, "trailing bytes after frame")
        kwargs = {} if tcp_flags is None else {"tcp_flags": tcp_flags}
        features = extract_features(item, state, now, **kwargs)

        label = None
        if isinstance(verdict, Block):
            disposition: Disposition = Blocked(verdict.reason)
        else:
            active = self._active
            self._probe("model", conn.conn_id)
            x = preprocess(features, active.model)
            label, _ = predict_label(active.model, x)
            if label is ClassLabel.LEGITIMATE:
                disposition = Forwarded()
            else:
                disposition = Intercepted(label, self.respond(label))
        if isinstance(disposition, Intercepted) and disposition.action is IpsAction.RESET_CONNECTION:
            self.conns.close(conn.src_ip, conn.conn_id)
        elif isinstance(item, codec.MqttPacket) and item.msg_type == codec.DISCONNECT:
            self.conns.close(conn.src_ip, conn.conn_id)
        self._record(conn, features, label, disposition, now, started)
        return disposition

    def relay_failed(self, conn: Conn, now: float, detail: str = "") -> RelayFailed:
        """Report that a Forwarded packet could not reach the broker."""
        out = RelayFailed(detail)
        with self._count_lock:
            self.counters.relay_failures += 1
            self.counters.dispositions["forwarded"] -= 1
            self.counters.dispositions[out.marker] += 1
        self.event_log.emit({"ts": now, "conn": conn.conn_id, "disposition": out.marker, "detail": detail})
        return out

    def _record(self, conn, features, label, disposition, now, started) -> None:
        if self.feature_log is not None:
            self.feature_log.append(features, label, disposition.marker)
        latency = time.perf_counter() - started
        with self._count_lock:
            self.counters.processed += 1
            self.counters.dispositions[disposition.marker] += 1
            if label is not None:
                self.counters.labels[label.dataset_name] += 1
        self.event_log.emit(
            {
                "ts": now,
                "conn": conn.conn_id,
                "disposition": disposition.marker,
                "label": label.dataset_name if label is not None else None,
                "action": disposition.action.value if isinstance(disposition, Intercepted) else None,
                "reason": disposition.reason.value if isinstance(disposition, Blocked) else None,
                "malformed": features.malformed,
                "latency_us": round(latency * 1e6, 3),
            }
        )

    def rotate_log(self, now: float, force: bool = False) -> SealedFile | None:
        if self.feature_log is None:
            return None
        return self.feature_log.rotate(now, force=force)

    def health(self) -> dict:
        active = self._active
        fl = self.feature_log
        return {
            "model_kind": getattr(active.model, "kind", "unknown"),
            "model_counter": active.counter,
            "rules_epoch": self.firewall.epoch,
            "processed": self.counters.processed,
            "dispositions": dict(self.counters.dispositions),
            "relay_failures": self.counters.relay_failures,
            "log_written": fl.records_written if fl else 0,
            "log_dropped": fl.records_dropped if fl else 0,
            "log_suspended": fl.suspended if fl else False,
        }

    def close(self) -> None:
        if self.feature_log is not None:
            self.feature_log.close()
        self.event_log.close()
