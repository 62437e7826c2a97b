"""Per-packet feature records in the MQTTset column layout."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from ..dataset import _to_float
from ..schema import CATEGORICAL_COLUMNS, FEATURE_COLUMNS, MQTT_SCHEMA_HASH
from . import codec
from .codec import MalformedFrame, MqttPacket

# Proxy-synthesized TCP flag words.
TCP_PSH_ACK = 0x18
TCP_FIN_PSH_ACK = 0x19

_COL = {name: i for i, name in enumerate(FEATURE_COLUMNS)}


def _hex(value: int) -> str:
    return f"0x{value:08x}"


def _num(value) -> str:
    if isinstance(value, float):
        return repr(round(value, 9))
    return str(int(value))


@dataclass
class PacketFeatures:
    """The 33 schema slots as strings (CSV cell form), plus a malformed marker."""

    values: list[str]
    malformed: bool = False
    reason: str = ""

    def __getitem__(self, column: str) -> str:
        return self.values[_COL[column]]

    def as_row(self) -> tuple[str, ...]:
        return tuple(self.values)


def _blank() -> list[str]:
    # Absent-field sentinel: 0 for numeric slots, empty string for text slots.
    return ["" if c in CATEGORICAL_COLUMNS else "0" for c in FEATURE_COLUMNS]


@dataclass
class ConnState:
    last_time: float | None = None
    protocol_level: int | None = None
    auth_attempts: int = 0
    packets: int = 0


class ConnTable:
    """ConnState per (source, connection) with idle eviction."""

    def __init__(self, idle_timeout: float = 600.0):
        self.idle_timeout = idle_timeout
        self._states: dict[tuple[str, str], ConnState] = {}
        self._lock = threading.Lock()

    def get(self, source: str, conn_id: str, now: float) -> ConnState:
        key = (source, conn_id)
        with self._lock:
            st = self._states.get(key)
            if st is not None and st.last_time is not None and now - st.last_time > self.idle_timeout:
                st = None
            if st is None:
                st = self._states[key] = ConnState()
            return st

    def close(self, source: str, conn_id: str) -> None:
        with self._lock:
            self._states.pop((source, conn_id), None)

    def evict_idle(self, now: float) -> int:
        with self._lock:
            stale = [k for k, s in self._states.items()
                     if s.last_time is not None and now - s.last_time > self.idle_timeout]
            for k in stale:
                del self._states[k]
            return len(stale)

    def __len__(self) -> int:
        return len(self._states)


def extract_features(
    packet: MqttPacket | MalformedFrame,
    state: ConnState,
    arrival_time: float,
    tcp_flags: int = TCP_PSH_ACK,
) -> PacketFeatures:
    """Fill every schema slot for one client-to-broker frame and update `state`."""
    v = _blank()

    def put(col: str, value) -> None:
        v[_COL[col]] = value if isinstance(value, str) else _num(value)

    delta = 0.0 if state.last_time is None else max(0.0, arrival_time - state.last_time)
    state.last_time = arrival_time if state.last_time is None else max(state.last_time, arrival_time)
    state.packets += 1
    put("tcp.flags", _hex(tcp_flags))
    put("tcp.time_delta", float(delta))
    put("tcp.len", len(packet.raw))
    put("mqtt.msgtype", packet.msg_type)
    put("mqtt.hdrflags", _hex((packet.msg_type << 4) | packet.flags))

    if isinstance(packet, MalformedFrame):
        put("mqtt.len", packet.declared_length or 0)
        put("mqtt.qos", (packet.flags >> 1) & 0b11)
        put("mqtt.dupflag", (packet.flags >> 3) & 1)
        put("mqtt.retain", packet.flags & 1)
        return PacketFeatures(v, malformed=True, reason=packet.reason.value)

    put("mqtt.len", packet.remaining_length)
    t = packet.msg_type
    if t == codec.PUBLISH:
        put("mqtt.qos", packet.qos)
        put("mqtt.dupflag", int(packet.dup))
        put("mqtt.retain", int(packet.retain))
        put("mqtt.msg", (packet.payload or b"").hex())
        if packet.message_id is not None:
            put("mqtt.msgid", packet.message_id)
    elif t == codec.CONNECT:
        cf = packet.connect_flags or 0
        state.protocol_level = packet.protocol_level
        state.auth_attempts += 1
        put("mqtt.protoname", packet.protocol_name or "")
        put("mqtt.proto_len", len((packet.protocol_name or "").encode("utf-8")))
        put("mqtt.ver", packet.protocol_level or 0)
        put("mqtt.kalive", packet.keepalive or 0)
        put("mqtt.conflags", _hex(cf))
        put("mqtt.conflag.reserved", cf & 0x01)
        put("mqtt.conflag.cleansess", (cf >> 1) & 1)
        put("mqtt.conflag.willflag", (cf >> 2) & 1)
        put("mqtt.conflag.qos", (cf >> 3) & 0b11)
        put("mqtt.conflag.retain", (cf >> 5) & 1)
        put("mqtt.conflag.passwd", (cf >> 6) & 1)
        put("mqtt.conflag.uname", (cf >> 7) & 1)
        if cf & 0x04:
            wt = (packet.will_topic or "").encode("utf-8")
            put("mqtt.willtopic", packet.will_topic or "")
            put("mqtt.willtopic_len", len(wt))
            put("mqtt.willmsg", (packet.will_message or b"").hex())
            put("mqtt.willmsg_len", len(packet.will_message or b""))
    elif t == codec.CONNACK:
        fl = packet.conack_flags or 0
        put("mqtt.conack.flags", _hex(fl))
        put("mqtt.conack.flags.reserved", fl & 0xFE)
        put("mqtt.conack.flags.sp", fl & 0x01)
        put("mqtt.conack.val", packet.return_code or 0)
    elif t == codec.SUBSCRIBE:
        put("mqtt.msgid", packet.message_id or 0)
        if packet.subscriptions:
            put("mqtt.sub.qos", packet.subscriptions[0][1])
    elif t == codec.SUBACK:
        put("mqtt.msgid", packet.message_id or 0)
        if packet.granted_qos:
            put("mqtt.suback.qos", packet.granted_qos[0])
    elif packet.message_id is not None:
        put("mqtt.msgid", packet.message_id)
    return PacketFeatures(v)


class SchemaMismatch(Exception):
    pass


def preprocess(features: PacketFeatures, model) -> np.ndarray:
    """Encode a feature record into the model's input vector.

    The model carries its fitted encoders and the names of the columns it was
    trained on; unseen categorical values map to code 0.
    """
    if model.schema_hash != MQTT_SCHEMA_HASH:
        raise SchemaMismatch("model was not trained on the MQTT feature schema")
    names = model.feature_names
    enc = model.encoders
    row = features.values
    out = np.empty(len(names), dtype=np.float64)
    for j, name in enumerate(names):
        cell = row[_COL[name]]
        if enc is not None:
            out[j] = enc.encode_cell(name, cell)
        else:
            x = _to_float(cell)
            out[j] = 0.0 if x is None else x
    return out
