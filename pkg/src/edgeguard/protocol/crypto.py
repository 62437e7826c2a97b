"""Session key derivation, handshake proofs and the encrypt-then-MAC envelope.

Envelope layout (big-endian)::

    header  = u8 version | u8 type | 49-byte tag | u32 ciphertext length
    message = header | 16-byte IV | ciphertext | 20-byte HMAC-SHA1(mac_key, header | IV | ciphertext)

The ciphertext is AES-128-CBC over the PKCS#7-padded payload.  Keys come from
HKDF-Expand with SHA-1 (RFC 5869 section 2.3), PRK = the shared secret,
info = nonce_a | nonce_b, 36 bytes of output: two counter-labelled HMAC rounds,
first 16 bytes the encryption key and the next 20 the MAC key.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives import hashes, padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDFExpand

from .wire import PROTOCOL_VERSION, TAG_SIZE, MsgType, ProtocolError, RejectCode, VersionTag

NONCE_SIZE = 32
SECRET_SIZE = 32
IV_SIZE = 16
MAC_SIZE = 20
_HEADER = struct.Struct(f">BB{TAG_SIZE}sI")
HEADER_SIZE = _HEADER.size
OVERHEAD = HEADER_SIZE + IV_SIZE + MAC_SIZE

INITIATOR_LABEL = b"edgeguard initiator proof"
RESPONDER_LABEL = b"edgeguard responder proof"


@dataclass(frozen=True)
class SessionKeys:
    enc_key: bytes
    mac_key: bytes


def derive_keys(secret: bytes, nonce_a: bytes, nonce_b: bytes) -> SessionKeys:
    okm = HKDFExpand(algorithm=hashes.SHA1(), length=36, info=nonce_a + nonce_b).derive(secret)
    return SessionKeys(okm[:16], okm[16:])


def proof(secret: bytes, label: bytes, nonce_a: bytes, nonce_b: bytes) -> bytes:
    return hmac.new(secret, label + nonce_a + nonce_b, hashlib.sha1).digest()


def new_nonce() -> bytes:
    return os.urandom(NONCE_SIZE)


class TamperError(ProtocolError):
    def __init__(self, detail: str = "envelope failed authentication"):
        super().__init__(RejectCode.TAMPER, detail)


def seal(keys: SessionKeys, msg_type: MsgType, tag: VersionTag, payload: bytes, iv: bytes | None = None) -> bytes:
    iv = os.urandom(IV_SIZE) if iv is None else iv
    padder = padding.PKCS7(128).padder()
    padded = padder.update(payload) + padder.finalize()
    enc = Cipher(algorithms.AES(keys.enc_key), modes.CBC(iv)).encryptor()
    ct = enc.update(padded) + enc.finalize()
    header = _HEADER.pack(PROTOCOL_VERSION, int(msg_type), tag.encode(), len(ct))
    mac = hmac.new(keys.mac_key, header + iv + ct, hashlib.sha1).digest()
    return header + iv + ct + mac


def open_envelope(keys: SessionKeys, data: bytes) -> tuple[MsgType, VersionTag, bytes]:
    """Authenticate, then decrypt.  Nothing derived from the ciphertext is
    looked at before the MAC has verified."""
    if len(data) < OVERHEAD:
        raise TamperError("envelope too short")
    header, rest = data[:HEADER_SIZE], data[HEADER_SIZE:]
    body, mac = rest[:-MAC_SIZE], rest[-MAC_SIZE:]
    expected = hmac.new(keys.mac_key, header + body, hashlib.sha1).digest()
    if not hmac.compare_digest(mac, expected):
        raise TamperError()
    version, msg_type, tag_bytes, ct_len = _HEADER.unpack(header)
    iv, ct = body[:IV_SIZE], body[IV_SIZE:]
    if version != PROTOCOL_VERSION:
        raise ProtocolError(RejectCode.PROTOCOL, f"envelope version {version}")
    if ct_len != len(ct) or ct_len == 0 or ct_len % 16:
        raise ProtocolError(RejectCode.PROTOCOL, "ciphertext length mismatch")
    dec = Cipher(algorithms.AES(keys.enc_key), modes.CBC(iv)).decryptor()
    padded = dec.update(ct) + dec.finalize()
    unpadder = padding.PKCS7(128).unpadder()
    try:
        payload = unpadder.update(padded) + unpadder.finalize()
    except ValueError:
        raise ProtocolError(RejectCode.PROTOCOL, "bad padding under a valid MAC") from None
    try:
        return MsgType(msg_type), VersionTag.decode(tag_bytes), payload
    except ValueError as exc:
        raise ProtocolError(RejectCode.PROTOCOL, str(exc)) from None
