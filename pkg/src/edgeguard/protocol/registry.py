"""Trusted edge registry with an append-only journal of accepted counters.

Registry file (JSON)::

    {"edges": [{"edge_id": "<32 hex>", "user_id": "<32 hex>", "secret": "<64 hex>"}]}

Journal lines: ``accept <edge hex> <DVT|TMVT> <counter> <sha256 hex> <unix time>`` or
``rebaseline <edge hex> <DVT|TMVT> <counter> - <unix time>``.  The last
accepted counters are rebuilt by replaying the journal.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from ..fsutil import write_atomic
from .crypto import SECRET_SIZE
from .wire import TagKind


class RegistryError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeEntry:
    edge_id: bytes
    user_id: bytes
    secret: bytes


def _unhex(text: str, size: int, what: str) -> bytes:
    try:
        raw = bytes.fromhex(text)
    except (TypeError, ValueError):
        raise RegistryError(f"{what} is not hex") from None
    if len(raw) != size:
        raise RegistryError(f"{what} must be {size} bytes, got {len(raw)}")
    return raw


def new_identity(name: str | None = None) -> EdgeEntry:
    edge = secrets.token_bytes(16) if name is None else name.encode()[:16].ljust(16, b"\0")
    return EdgeEntry(edge, secrets.token_bytes(16), secrets.token_bytes(SECRET_SIZE))


class TrustRegistry:
    def __init__(self, entries=(), journal: str | Path | None = None):
        self._entries: dict[bytes, EdgeEntry] = {}
        for e in entries:
            if e.edge_id in self._entries:
                raise RegistryError(f"duplicate edge {e.edge_id.hex()}")
            if len(e.secret) < 20:
                raise RegistryError("shared secrets must be at least 20 bytes")
            self._entries[e.edge_id] = e
        self._counters: dict[tuple[bytes, TagKind], int] = {}
        self._lock = threading.Lock()
        self._guards: dict[tuple[bytes, TagKind], threading.Lock] = {}
        self.journal = Path(journal) if journal is not None else None
        if self.journal is not None and self.journal.exists():
            self._replay()

    @classmethod
    def load(cls, path: str | Path, journal: str | Path | None = None) -> "TrustRegistry":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise RegistryError(f"cannot read registry {path}: {exc}") from None
        entries = [
            EdgeEntry(
                _unhex(e["edge_id"], 16, "edge_id"),
                _unhex(e["user_id"], 16, "user_id"),
                _unhex(e["secret"], SECRET_SIZE, "secret"),
            )
            for e in doc.get("edges", [])
        ]
        if journal is None:
            journal = path.with_suffix(".journal")
        return cls(entries, journal)

    def save(self, path: str | Path) -> None:
        doc = {
            "edges": [
                {"edge_id": e.edge_id.hex(), "user_id": e.user_id.hex(), "secret": e.secret.hex()}
                for e in self._entries.values()
            ]
        }
        write_atomic(path, json.dumps(doc, indent=2) + "\n", mode=0o600)

    def entries(self) -> list[EdgeEntry]:
        return list(self._entries.values())

    def lookup(self, edge_id: bytes) -> EdgeEntry | None:
        return self._entries.get(edge_id)

    def last(self, edge_id: bytes, kind: TagKind) -> int:
        with self._lock:
            return self._counters.get((edge_id, kind), 0)

    def _replay(self) -> None:
        with open(self.journal, encoding="ascii") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 6 or parts[0] not in ("accept", "rebaseline"):
                    raise RegistryError(f"{self.journal}:{lineno}: bad journal line")
                key = (bytes.fromhex(parts[1]), TagKind[parts[2]])
                counter = int(parts[3])
                if parts[0] == "accept":
                    self._counters[key] = max(self._counters.get(key, 0), counter)
                else:
                    self._counters[key] = counter

    def _append(self, line: str) -> None:
        if self.journal is None:
            return
        self.journal.parent.mkdir(parents=True, exist_ok=True)
        with open(self.journal, "a", encoding="ascii") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def guard(self, edge_id: bytes, kind: TagKind) -> threading.Lock:
        """Lock serializing the final install-and-advance step per (edge, kind)."""
        with self._lock:
            return self._guards.setdefault((edge_id, kind), threading.Lock())

    def check_fresh(self, edge_id: bytes, kind: TagKind, counter: int) -> bool:
        return counter > self.last(edge_id, kind)

    def compare_and_advance(self, edge_id: bytes, kind: TagKind, counter: int, checksum: str = "-") -> bool:
        """Record `counter` if it is above the last accepted one; False otherwise."""
        with self._lock:
            key = (edge_id, kind)
            if counter <= self._counters.get(key, 0):
                return False
            self._append(f"accept {edge_id.hex()} {kind.name} {counter} {checksum} {int(time.time())}")
            self._counters[key] = counter
            return True

    def rebaseline(self, edge_id: bytes, kind: TagKind, counter: int) -> int:
        """Operator recovery: set the last accepted counter outright (may lower it)."""
        if edge_id not in self._entries:
            raise RegistryError(f"unknown edge {edge_id.hex()}")
        if counter < 0:
            raise RegistryError("counter must be non-negative")
        with self._lock:
            key = (edge_id, kind)
            previous = self._counters.get(key, 0)
            self._append(f"rebaseline {edge_id.hex()} {kind.name} {counter} - {int(time.time())}")
            self._counters[key] = counter
            return previous
