"""Newline-delimited hex-frame replay format: ``<epoch-seconds> <conn-id> <hex bytes>``."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from ..fsutil import write_atomic


@dataclass(frozen=True)
class ReplayRecord:
    time: float
    conn_id: str
    frame: bytes

    @property
    def source(self) -> str:
        # conn ids are "<ip>:<port>"; anything else is its own source.
        host, sep, _ = self.conn_id.rpartition(":")
        return host if sep else self.conn_id


def format_record(rec: ReplayRecord) -> str:
    return f"{rec.time:.6f} {rec.conn_id} {rec.frame.hex()}"


def parse_record(line: str, lineno: int = 0) -> ReplayRecord:
    parts = line.split()
    if len(parts) != 3:
        raise ValueError(f"replay line {lineno}: expected 3 fields, got {len(parts)}")
    try:
        return ReplayRecord(float(parts[0]), parts[1], bytes.fromhex(parts[2]))
    except ValueError as exc:
        raise ValueError(f"replay line {lineno}: {exc}") from None


def write_replay(path: str | Path, records: Iterable[ReplayRecord]) -> Path:
    return write_atomic(path, "".join(format_record(r) + "\n" for r in records))


def read_replay(path: str | Path) -> Iterator[ReplayRecord]:
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield parse_record(line, lineno)
