"""MQTT v3.1.1 frame parsing and encoding.

Parsing never raises on bad input: a broken frame comes back as a
`MalformedFrame` carrying a reason code and how many bytes to skip, and a short
buffer comes back as `NEED_MORE`.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

CONNECT, CONNACK, PUBLISH, PUBACK, PUBREC, PUBREL, PUBCOMP = 1, 2, 3, 4, 5, 6, 7
SUBSCRIBE, SUBACK, UNSUBSCRIBE, UNSUBACK, PINGREQ, PINGRESP, DISCONNECT = 8, 9, 10, 11, 12, 13, 14

TYPE_NAMES = {
    CONNECT: "CONNECT", CONNACK: "CONNACK", PUBLISH: "PUBLISH", PUBACK: "PUBACK",
    PUBREC: "PUBREC", PUBREL: "PUBREL", PUBCOMP: "PUBCOMP", SUBSCRIBE: "SUBSCRIBE",
    SUBACK: "SUBACK", UNSUBSCRIBE: "UNSUBSCRIBE", UNSUBACK: "UNSUBACK",
    PINGREQ: "PINGREQ", PINGRESP: "PINGRESP", DISCONNECT: "DISCONNECT",
}

# Fixed-header flag nibbles required by the standard for non-PUBLISH packets.
_REQUIRED_FLAGS = {PUBREL: 0b0010, SUBSCRIBE: 0b0010, UNSUBSCRIBE: 0b0010}
_EMPTY_BODY = {PINGREQ, PINGRESP, DISCONNECT}
_MSGID_ONLY = {PUBACK, PUBREC, PUBREL, PUBCOMP, UNSUBACK}

MAX_REMAINING_LENGTH = 268_435_455


class Reason(enum.Enum):
    INVALID_TYPE = "invalid-msg-type"
    BAD_FLAGS = "bad-header-flags"
    INVALID_QOS = "invalid-qos"
    BAD_LENGTH = "bad-remaining-length"
    LENGTH_OVERRUN = "length-overrun"
    BAD_UTF8 = "bad-utf8"
    UNSUPPORTED_VERSION = "unsupported-version"
    PROTOCOL = "protocol-violation"
    TRUNCATED = "truncated"


class _NeedMore:
    def __repr__(self):
        return "NEED_MORE"


NEED_MORE = _NeedMore()


@dataclass
class MqttPacket:
    msg_type: int
    flags: int
    remaining_length: int
    raw: bytes = b""
    protocol_name: str | None = None
    protocol_level: int | None = None
    connect_flags: int | None = None
    keepalive: int | None = None
    client_id: str | None = None
    will_topic: str | None = None
    will_message: bytes | None = None
    username: str | None = None
    password: bytes | None = None
    message_id: int | None = None
    topic: str | None = None
    payload: bytes | None = None
    conack_flags: int | None = None
    return_code: int | None = None
    subscriptions: list[tuple[str, int]] = field(default_factory=list)
    granted_qos: list[int] = field(default_factory=list)

    @property
    def dup(self) -> bool:
        return bool(self.flags & 0b1000)

    @property
    def qos(self) -> int:
        return (self.flags >> 1) & 0b11

    @property
    def retain(self) -> bool:
        return bool(self.flags & 0b0001)

    @property
    def type_name(self) -> str:
        return TYPE_NAMES.get(self.msg_type, str(self.msg_type))


@dataclass
class MalformedFrame:
    reason: Reason
    raw: bytes
    msg_type: int
    flags: int
    declared_length: int | None
    detail: str = ""

    @property
    def resync_offset(self) -> int:
        """Bytes to skip before the next frame boundary."""
        return len(self.raw)


def encode_varint(n: int) -> bytes:
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise ValueError(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        byte, n = n % 128, n // 128
        out.append(byte | (0x80 if n else 0))
        if not n:
            return bytes(out)


def decode_varint(buf: bytes, start: int = 1):
    """Return (value, n_bytes), None if more bytes are needed, or -1 if invalid."""
    value = 0
    for i in range(4):
        if start + i >= len(buf):
            return None
        byte = buf[start + i]
        value += (byte & 0x7F) << (7 * i)
        if not byte & 0x80:
            return value, i + 1
    return -1


class _Malformed(Exception):
    def __init__(self, reason: Reason, detail: str = ""):
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


class _Body:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise _Malformed(Reason.LENGTH_OVERRUN, f"field needs {n} bytes, {self.remaining()} left")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def binary(self) -> bytes:
        return self.take(self.u16())

    def utf8(self) -> str:
        raw = self.binary()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise _Malformed(Reason.BAD_UTF8, str(exc)) from None
        if "\x00" in text:
            raise _Malformed(Reason.BAD_UTF8, "NUL in UTF-8 string")
        return text


def _parse_body(pkt: MqttPacket, body: bytes) -> None:
    t = pkt.msg_type
    b = _Body(body)
    if t == CONNECT:
        pkt.protocol_name = b.utf8()
        pkt.protocol_level = b.u8()
        if pkt.protocol_level not in (3, 4):
            raise _Malformed(Reason.UNSUPPORTED_VERSION, f"protocol level {pkt.protocol_level}")
        pkt.connect_flags = b.u8()
        pkt.keepalive = b.u16()
        pkt.client_id = b.utf8()
        cf = pkt.connect_flags
        if cf & 0x01:
            raise _Malformed(Reason.PROTOCOL, "reserved connect flag set")
        if cf & 0x04:
            pkt.will_topic = b.utf8()
            pkt.will_message = b.binary()
        if cf & 0x80:
            pkt.username = b.utf8()
        if cf & 0x40:
            pkt.password = b.binary()
    elif t == CONNACK:
        pkt.conack_flags = b.u8()
        pkt.return_code = b.u8()
    elif t == PUBLISH:
        pkt.topic = b.utf8()
        if pkt.qos > 0:
            pkt.message_id = b.u16()
        pkt.payload = b.take(b.remaining())
    elif t in _MSGID_ONLY:
        pkt.message_id = b.u16()
    elif t == SUBSCRIBE:
        pkt.message_id = b.u16()
        while b.remaining():
            topic = b.utf8()
            qos = b.u8()
            if qos > 2:
                raise _Malformed(Reason.INVALID_QOS, f"requested qos {qos}")
            pkt.subscriptions.append((topic, qos))
        if not pkt.subscriptions:
            raise _Malformed(Reason.PROTOCOL, "SUBSCRIBE without topics")
    elif t == SUBACK:
        pkt.message_id = b.u16()
        pkt.granted_qos = list(b.take(b.remaining()))
    elif t == UNSUBSCRIBE:
        pkt.message_id = b.u16()
        while b.remaining():
            pkt.subscriptions.append((b.utf8(), 0))
        if not pkt.subscriptions:
            raise _Malformed(Reason.PROTOCOL, "UNSUBSCRIBE without topics")
    if b.remaining():
        raise _Malformed(Reason.BAD_LENGTH, f"{b.remaining()} unexpected trailing bytes")


def parse_frame(buf: bytes, eof: bool = False):
    """Parse one frame from the front of `buf`.

    Returns ``(MqttPacket | MalformedFrame, consumed)`` or ``(NEED_MORE, 0)``.
    With ``eof=True`` a short buffer is reported as a truncated MalformedFrame
    instead of asking for more data.
    """
    buf = bytes(buf)
    if len(buf) < 2:
        if eof and buf:
            return MalformedFrame(Reason.TRUNCATED, buf, buf[0] >> 4, buf[0] & 0x0F, None), len(buf)
        if eof:
            return MalformedFrame(Reason.TRUNCATED, b"", 0, 0, None), 0
        return NEED_MORE, 0
    first = buf[0]
    msg_type, flags = first >> 4, first & 0x0F
    decoded = decode_varint(buf)
    if decoded is None:
        if eof:
            return MalformedFrame(Reason.TRUNCATED, buf, msg_type, flags, None), len(buf)
        return NEED_MORE, 0
    if decoded == -1:
        raw = buf[:5]
        return MalformedFrame(Reason.BAD_LENGTH, raw, msg_type, flags, None, "varint longer than 4 bytes"), len(raw)
    length, n_len = decoded
    end = 1 + n_len + length
    if len(buf) < end:
        if eof:
            return MalformedFrame(Reason.TRUNCATED, buf, msg_type, flags, length, "frame cut short"), len(buf)
        return NEED_MORE, 0
    raw = buf[:end]

    def bad(reason: Reason, detail: str = ""):
        return MalformedFrame(reason, raw, msg_type, flags, length, detail), end

    if msg_type in (0, 15):
        return bad(Reason.INVALID_TYPE, f"reserved type {msg_type}")
    if msg_type == PUBLISH:
        if (flags >> 1) & 0b11 == 3:
            return bad(Reason.INVALID_QOS, "qos 3")
    elif flags != _REQUIRED_FLAGS.get(msg_type, 0):
        return bad(Reason.BAD_FLAGS, f"flags {flags:#06b} for {TYPE_NAMES[msg_type]}")
    if msg_type in _EMPTY_BODY and length:
        return bad(Reason.BAD_LENGTH, f"{TYPE_NAMES[msg_type]} with remaining length {length}")
    pkt = MqttPacket(msg_type, flags, length, raw)
    try:
        _parse_body(pkt, raw[1 + n_len :])
    except _Malformed as exc:
        return bad(exc.reason, exc.detail)
    return pkt, end


def iter_frames(buf: bytes, eof: bool = True):
    """Yield every frame in `buf`; stops early on NEED_MORE when eof is False."""
    pos = 0
    while pos < len(buf):
        item, used = parse_frame(buf[pos:], eof=eof)
        if item is NEED_MORE:
            return
        yield item
        pos += used


# ---- encoding -------------------------------------------------------------


def _str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


def _bin(b: bytes) -> bytes:
    return struct.pack(">H", len(b)) + b


def raw_frame(msg_type: int, flags: int, body: bytes) -> bytes:
    """Frame an arbitrary body with no validation (the type nibble may be reserved)."""
    return bytes([(msg_type << 4) | flags]) + encode_varint(len(body)) + body


_frame = raw_frame


def connect(
    client_id: str,
    keepalive: int = 60,
    clean_session: bool = True,
    username: str | None = None,
    password: bytes | None = None,
    will: tuple[str, bytes, int, bool] | None = None,
    protocol_name: str = "MQTT",
    protocol_level: int = 4,
) -> bytes:
    flags = 0x02 if clean_session else 0
    tail = _str(client_id)
    if will is not None:
        w_topic, w_msg, w_qos, w_retain = will
        flags |= 0x04 | (w_qos << 3) | (0x20 if w_retain else 0)
        tail += _str(w_topic) + _bin(w_msg)
    if username is not None:
        flags |= 0x80
        tail += _str(username)
    if password is not None:
        flags |= 0x40
        tail += _bin(password)
    body = _str(protocol_name) + bytes([protocol_level, flags]) + struct.pack(">H", keepalive) + tail
    return _frame(CONNECT, 0, body)


def connack(return_code: int = 0, session_present: bool = False) -> bytes:
    return _frame(CONNACK, 0, bytes([1 if session_present else 0, return_code]))


def publish(topic: str, payload: bytes, qos: int = 0, message_id: int | None = None,
            retain: bool = False, dup: bool = False) -> bytes:
    flags = (0x08 if dup else 0) | (qos << 1) | (0x01 if retain else 0)
    body = _str(topic)
    if qos:
        if message_id is None:
            raise ValueError("qos > 0 publish needs a message id")
        body += struct.pack(">H", message_id)
    return _frame(PUBLISH, flags, body + payload)


def msgid_packet(msg_type: int, message_id: int) -> bytes:
    return _frame(msg_type, _REQUIRED_FLAGS.get(msg_type, 0), struct.pack(">H", message_id))


def subscribe(message_id: int, topics: list[tuple[str, int]]) -> bytes:
    body = struct.pack(">H", message_id) + b"".join(_str(t) + bytes([q]) for t, q in topics)
    return _frame(SUBSCRIBE, 0b0010, body)


def suback(message_id: int, granted: list[int]) -> bytes:
    return _frame(SUBACK, 0, struct.pack(">H", message_id) + bytes(granted))


def unsubscribe(message_id: int, topics: list[str]) -> bytes:
    return _frame(UNSUBSCRIBE, 0b0010, struct.pack(">H", message_id) + b"".join(map(_str, topics)))


def pingreq() -> bytes:
    return _frame(PINGREQ, 0, b"")


def pingresp() -> bytes:
    return _frame(PINGRESP, 0, b"")


def disconnect() -> bytes:
    return _frame(DISCONNECT, 0, b"")


def encode_packet(pkt: MqttPacket) -> bytes:
    """Canonical encoding of a parsed packet (inverse of parse_frame for well-formed frames)."""
    t = pkt.msg_type
    if t == CONNECT:
        cf = pkt.connect_flags or 0
        body = _str(pkt.protocol_name or "") + bytes([pkt.protocol_level or 0, cf])
        body += struct.pack(">H", pkt.keepalive or 0) + _str(pkt.client_id or "")
        if cf & 0x04:
            body += _str(pkt.will_topic or "") + _bin(pkt.will_message or b"")
        if cf & 0x80:
            body += _str(pkt.username or "")
        if cf & 0x40:
            body += _bin(pkt.password or b"")
    elif t == CONNACK:
        body = bytes([pkt.conack_flags or 0, pkt.return_code or 0])
    elif t == PUBLISH:
        body = _str(pkt.topic or "")
        if pkt.qos:
            body += struct.pack(">H", pkt.message_id or 0)
        body += pkt.payload or b""
    elif t in _MSGID_ONLY:
        body = struct.pack(">H", pkt.message_id or 0)
    elif t == SUBSCRIBE:
        body = struct.pack(">H", pkt.message_id or 0)
        body += b"".join(_str(tp) + bytes([q]) for tp, q in pkt.subscriptions)
    elif t == SUBACK:
        body = struct.pack(">H", pkt.message_id or 0) + bytes(pkt.granted_qos)
    elif t == UNSUBSCRIBE:
        body = struct.pack(">H", pkt.message_id or 0) + b"".join(_str(tp) for tp, _ in pkt.subscriptions)
    else:
        body = b""
    return _frame(t, pkt.flags, body)
