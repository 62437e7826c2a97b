"""Length-prefixed frames, message types, reject codes and freshness tags."""

from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass

PROTOCOL_VERSION = 1
MAX_FRAME = 16 << 20


class MsgType(enum.IntEnum):
    HELLO = 1
    CHALLENGE = 2
    PROOF = 3
    DATA_PUSH = 4
    MODEL_PUSH = 5
    CHUNK = 6
    ACK = 7
    REJECT = 8
    FIN = 9


class RejectCode(enum.IntEnum):
    UNKNOWN_EDGE = 1
    BAD_PROOF = 2
    TIMEOUT = 3
    REPLAY = 4
    TAMPER = 5
    CORRUPT = 6
    SCHEMA_MISMATCH = 7
    SKEW = 8
    PROTOCOL = 9


class ProtocolError(Exception):
    """A transfer or handshake failed with a reject code."""

    def __init__(self, code: RejectCode, detail: str = ""):
        super().__init__(f"{code.name}: {detail}" if detail else code.name)
        self.code = code
        self.detail = detail


class PeerRejected(ProtocolError):
    """The remote side sent REJECT."""


class TagKind(enum.IntEnum):
    DVT = 1
    TMVT = 2


_TAG = struct.Struct(">B16s16sQQ")
TAG_SIZE = _TAG.size


@dataclass(frozen=True)
class VersionTag:
    kind: TagKind
    edge_id: bytes
    user_id: bytes
    created_at: int
    counter: int

    def __post_init__(self):
        if len(self.edge_id) != 16 or len(self.user_id) != 16:
            raise ValueError("edge_id and user_id must be 16 bytes")
        if not 0 <= self.counter < 1 << 64 or not 0 <= self.created_at < 1 << 64:
            raise ValueError("counter and created_at must fit in u64")

    def encode(self) -> bytes:
        return _TAG.pack(int(self.kind), self.edge_id, self.user_id, self.created_at, self.counter)

    @classmethod
    def decode(cls, data: bytes) -> "VersionTag":
        if len(data) != TAG_SIZE:
            raise ValueError(f"tag must be {TAG_SIZE} bytes, got {len(data)}")
        kind, edge, user, created, counter = _TAG.unpack(data)
        return cls(TagKind(kind), edge, user, created, counter)


def write_frame(sock: socket.socket, msg_type: MsgType, body: bytes = b"") -> None:
    payload = bytes([int(msg_type)]) + body
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError(RejectCode.PROTOCOL, "connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[MsgType, bytes]:
    try:
        (length,) = struct.unpack(">I", _recv_exact(sock, 4))
        if not 1 <= length <= MAX_FRAME:
            raise ProtocolError(RejectCode.PROTOCOL, f"frame length {length} out of range")
        payload = _recv_exact(sock, length)
    except socket.timeout:
        raise ProtocolError(RejectCode.TIMEOUT, "peer did not respond in time") from None
    try:
        msg_type = MsgType(payload[0])
    except ValueError:
        raise ProtocolError(RejectCode.PROTOCOL, f"unknown message type {payload[0]}") from None
    return msg_type, payload[1:]


def send_reject(sock: socket.socket, code: RejectCode, detail: str = "") -> None:
    try:
        write_frame(sock, MsgType.REJECT, bytes([int(code)]) + detail.encode("utf-8")[:512])
    except OSError:
        pass


def parse_reject(body: bytes) -> PeerRejected:
    try:
        code = RejectCode(body[0])
    except (IndexError, ValueError):
        code = RejectCode.PROTOCOL
    return PeerRejected(code, body[1:].decode("utf-8", "replace"))
