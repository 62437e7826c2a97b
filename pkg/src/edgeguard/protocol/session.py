"""Handshake, chunked transfers and the receiving side of a session.

Flow for one transfer (initiator I, responder R)::

    I -> R  HELLO      edge_id | user_id | nonce_a
    R -> I  CHALLENGE  nonce_b
    I -> R  PROOF      HMAC(secret, initiator label | nonce_a | nonce_b)
    R -> I  ACK        HMAC(secret, responder label | nonce_a | nonce_b)
    I -> R  DATA_PUSH or MODEL_PUSH   envelope(manifest)
    R -> I  ACK        envelope(b"ready")
    I -> R  CHUNK ...  envelope(u32 index | bytes)
    R -> I  ACK        envelope(u64 accepted counter)
    I -> R  FIN

Any failure on the responder is answered with REJECT <code> and the
connection is closed.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
import socket
import struct
import time
from dataclasses import dataclass
from typing import Callable

from .crypto import (
    INITIATOR_LABEL,
    NONCE_SIZE,
    RESPONDER_LABEL,
    SessionKeys,
    derive_keys,
    new_nonce,
    open_envelope,
    proof,
    seal,
)
from .registry import EdgeEntry, TrustRegistry
from .wire import (
    MsgType,
    PeerRejected,
    ProtocolError,
    RejectCode,
    TagKind,
    VersionTag,
    parse_reject,
    read_frame,
    send_reject,
    write_frame,
)

log = logging.getLogger(__name__)

CHUNK_SIZE = 64 * 1024
DEFAULT_SKEW = 300.0
_MANIFEST = struct.Struct(">QI32s")
_READY = b"ready"


@dataclass
class Session:
    sock: socket.socket
    keys: SessionKeys
    entry: EdgeEntry
    initiator: bool

    def send(self, msg_type: MsgType, tag: VersionTag, payload: bytes) -> None:
        write_frame(self.sock, msg_type, seal(self.keys, msg_type, tag, payload))

    def expect(self, *types: MsgType) -> tuple[MsgType, bytes]:
        msg_type, body = read_frame(self.sock)
        if msg_type is MsgType.REJECT:
            raise parse_reject(body)
        if msg_type not in types:
            raise ProtocolError(RejectCode.PROTOCOL, f"unexpected {msg_type.name}")
        return msg_type, body

    def open(self, frame_type: MsgType, body: bytes) -> tuple[VersionTag, bytes]:
        env_type, tag, payload = open_envelope(self.keys, body)
        if env_type is not frame_type:
            raise ProtocolError(RejectCode.PROTOCOL, "envelope type differs from frame type")
        if tag.edge_id != self.entry.edge_id or tag.user_id != self.entry.user_id:
            raise ProtocolError(RejectCode.PROTOCOL, "tag names a different edge or user")
        return tag, payload

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def initiate(sock: socket.socket, identity: EdgeEntry, timeout: float = 10.0) -> Session:
    """Run the handshake as initiator; raises PeerRejected or ProtocolError."""
    sock.settimeout(timeout)
    nonce_a = new_nonce()
    write_frame(sock, MsgType.HELLO, identity.edge_id + identity.user_id + nonce_a)
    msg_type, body = read_frame(sock)
    if msg_type is MsgType.REJECT:
        raise parse_reject(body)
    if msg_type is not MsgType.CHALLENGE or len(body) != NONCE_SIZE:
        raise ProtocolError(RejectCode.PROTOCOL, "expected CHALLENGE")
    nonce_b = body
    write_frame(sock, MsgType.PROOF, proof(identity.secret, INITIATOR_LABEL, nonce_a, nonce_b))
    msg_type, body = read_frame(sock)
    if msg_type is MsgType.REJECT:
        raise parse_reject(body)
    expected = proof(identity.secret, RESPONDER_LABEL, nonce_a, nonce_b)
    if msg_type is not MsgType.ACK or not hmac.compare_digest(body, expected):
        send_reject(sock, RejectCode.BAD_PROOF, "responder proof failed")
        raise ProtocolError(RejectCode.BAD_PROOF, "responder could not prove the shared secret")
    return Session(sock, derive_keys(identity.secret, nonce_a, nonce_b), identity, True)


def respond(sock: socket.socket, registry: TrustRegistry, timeout: float = 10.0) -> Session:
    """Run the handshake as responder; on failure sends REJECT and raises."""
    sock.settimeout(timeout)
    try:
        msg_type, body = read_frame(sock)
        if msg_type is not MsgType.HELLO or len(body) != 32 + NONCE_SIZE:
            raise ProtocolError(RejectCode.PROTOCOL, "expected HELLO")
        edge_id, user_id, nonce_a = body[:16], body[16:32], body[32:]
        entry = registry.lookup(edge_id)
        if entry is None or not hmac.compare_digest(entry.user_id, user_id):
            raise ProtocolError(RejectCode.UNKNOWN_EDGE, f"edge {edge_id.hex()} is not registered")
        nonce_b = new_nonce()
        write_frame(sock, MsgType.CHALLENGE, nonce_b)
        msg_type, body = read_frame(sock)
        if msg_type is MsgType.REJECT:
            raise parse_reject(body)
        expected = proof(entry.secret, INITIATOR_LABEL, nonce_a, nonce_b)
        if msg_type is not MsgType.PROOF or not hmac.compare_digest(body, expected):
            raise ProtocolError(RejectCode.BAD_PROOF, "initiator proof failed")
        write_frame(sock, MsgType.ACK, proof(entry.secret, RESPONDER_LABEL, nonce_a, nonce_b))
        return Session(sock, derive_keys(entry.secret, nonce_a, nonce_b), entry, False)
    except PeerRejected:
        raise
    except ProtocolError as exc:
        send_reject(sock, exc.code, exc.detail)
        raise


def make_tag(identity: EdgeEntry, kind: TagKind, counter: int, created_at: int | None = None) -> VersionTag:
    return VersionTag(kind, identity.edge_id, identity.user_id,
                      int(time.time()) if created_at is None else created_at, counter)


def push(session: Session, kind: TagKind, data: bytes, tag: VersionTag, chunk_size: int = CHUNK_SIZE) -> int:
    """Send `data` under `tag`; returns the counter the responder accepted."""
    frame_type = MsgType.DATA_PUSH if kind is TagKind.DVT else MsgType.MODEL_PUSH
    n_chunks = max(1, -(-len(data) // chunk_size))
    manifest = _MANIFEST.pack(len(data), n_chunks, hashlib.sha256(data).digest())
    session.send(frame_type, tag, manifest)
    _, body = session.expect(MsgType.ACK)
    _, reply = session.open(MsgType.ACK, body)
    if reply != _READY:
        raise ProtocolError(RejectCode.PROTOCOL, "responder did not accept the manifest")
    for i in range(n_chunks):
        piece = data[i * chunk_size : (i + 1) * chunk_size]
        session.send(MsgType.CHUNK, tag, struct.pack(">I", i) + piece)
    _, body = session.expect(MsgType.ACK)
    _, reply = session.open(MsgType.ACK, body)
    (accepted,) = struct.unpack(">Q", reply)
    write_frame(session.sock, MsgType.FIN)
    return accepted


# Handler signature: (session, tag, data) -> None; raise ProtocolError to refuse.
Handler = Callable[[Session, VersionTag, bytes], None]


def receive(session: Session, registry: TrustRegistry, handlers: dict[TagKind, Handler],
            max_skew: float = DEFAULT_SKEW, now: Callable[[], float] = time.time) -> VersionTag:
    """Accept one transfer on an established session.

    Checks run in this order: MAC, tag freshness (counter, then clock skew),
    per-chunk MAC and order, whole-payload checksum, handler, counter advance.
    """
    try:
        frame_type, body = session.expect(MsgType.DATA_PUSH, MsgType.MODEL_PUSH)
        tag, manifest = session.open(frame_type, body)
        kind = TagKind.DVT if frame_type is MsgType.DATA_PUSH else TagKind.TMVT
        if tag.kind is not kind:
            raise ProtocolError(RejectCode.PROTOCOL, "tag kind does not match the transfer type")
        if kind not in handlers:
            raise ProtocolError(RejectCode.PROTOCOL, f"{kind.name} transfers are not accepted here")
        if not registry.check_fresh(tag.edge_id, kind, tag.counter):
            raise ProtocolError(RejectCode.REPLAY,
                                f"counter {tag.counter} <= last accepted {registry.last(tag.edge_id, kind)}")
        if abs(now() - tag.created_at) > max_skew:
            raise ProtocolError(RejectCode.SKEW, "tag timestamp outside the allowed clock skew")
        try:
            total, n_chunks, digest = _MANIFEST.unpack(manifest)
        except struct.error:
            raise ProtocolError(RejectCode.PROTOCOL, "bad manifest") from None
        session.send(MsgType.ACK, tag, _READY)
        parts = []
        received = 0
        for i in range(n_chunks):
            _, body = session.expect(MsgType.CHUNK)
            ctag, payload = session.open(MsgType.CHUNK, body)
            if ctag != tag:
                raise ProtocolError(RejectCode.PROTOCOL, "chunk tag differs from the manifest tag")
            if len(payload) < 4 or struct.unpack(">I", payload[:4])[0] != i:
                raise ProtocolError(RejectCode.PROTOCOL, f"chunk {i} out of order")
            received += len(payload) - 4
            if received > total:
                raise ProtocolError(RejectCode.CORRUPT, "more bytes than the manifest declared")
            parts.append(payload[4:])
        data = b"".join(parts)
        if len(data) != total or hashlib.sha256(data).digest() != digest:
            raise ProtocolError(RejectCode.CORRUPT, "checksum mismatch")
        with registry.guard(tag.edge_id, kind):
            # Re-checked under the guard: a concurrent session may have won the race.
            if not registry.check_fresh(tag.edge_id, kind, tag.counter):
                raise ProtocolError(RejectCode.REPLAY, "a concurrent transfer already used this counter")
            handlers[kind](session, tag, data)
            registry.compare_and_advance(tag.edge_id, kind, tag.counter, digest.hex())
        session.send(MsgType.ACK, tag, struct.pack(">Q", tag.counter))
        try:
            session.expect(MsgType.FIN)
        except ProtocolError:
            pass
        return tag
    except PeerRejected:
        raise
    except ProtocolError as exc:
        send_reject(session.sock, exc.code, exc.detail)
        raise
