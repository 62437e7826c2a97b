"""Fog receiver, edge model receiver, push clients and the fog retraining cycle."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from ..dataset import LabeledTable, load_dataset
from ..engine import ModelRefused, check_model_schema
from ..fsutil import write_atomic
from ..ml.modelio import ModelFormatError, SchemaMismatchError, deserialize_model, serialize_model
from ..pipeline import TrainOptions, fit_model
from ..schema import MQTT_SCHEMA_HASH
from .registry import EdgeEntry, TrustRegistry
from .session import Session, initiate, make_tag, push, receive, respond
from .wire import ProtocolError, RejectCode, TagKind, VersionTag

log = logging.getLogger(__name__)


class FogStore:
    """Accepted data files and produced models, one directory per edge."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def edge_dir(self, edge_id: bytes) -> Path:
        d = self.root / edge_id.hex()
        d.mkdir(parents=True, exist_ok=True)
        return d

    def save_data(self, tag: VersionTag, data: bytes) -> Path:
        return write_atomic(self.edge_dir(tag.edge_id) / f"data-{tag.counter:010d}.csv", data)

    def data_files(self, edge_id: bytes) -> list[Path]:
        return sorted(self.edge_dir(edge_id).glob("data-*.csv"))

    def next_model_counter(self, edge_id: bytes) -> int:
        path = self.edge_dir(edge_id) / "tmvt-counter"
        return (int(path.read_text().strip()) if path.exists() else 0) + 1

    def save_model(self, tag: VersionTag, data: bytes) -> Path:
        d = self.edge_dir(tag.edge_id)
        out = write_atomic(d / f"model-{tag.counter:010d}.mqbm", data)
        write_atomic(d / "tmvt-counter", f"{tag.counter}\n")
        return out

    def latest_model(self, edge_id: bytes) -> tuple[Path, int] | None:
        models = sorted(self.edge_dir(edge_id).glob("model-*.mqbm"))
        if not models:
            return None
        return models[-1], int(models[-1].stem.split("-")[1])


@dataclass
class RetrainResult:
    model_bytes: bytes
    tag: VersionTag
    records: int
    path: Path


def retrain_cycle(
    store: FogStore,
    identity: EdgeEntry,
    base: LabeledTable,
    opts: TrainOptions = TrainOptions(),
    created_at: int | None = None,
) -> RetrainResult:
    """Retrain on the base corpus plus every accepted data file for this edge.

    Emits the model bytes and the next TMVT (previous cycle's counter + 1).
    """
    files = store.data_files(identity.edge_id)
    if not files:
        raise ValueError("no accepted data files for this edge")
    table = base
    records = 0
    for f in files:
        part = load_dataset(f, base.schema)
        records += len(part)
        table = table.concat(part)
    model = fit_model(table, opts)
    data = serialize_model(model)
    tag = make_tag(identity, TagKind.TMVT, store.next_model_counter(identity.edge_id), created_at)
    path = store.save_model(tag, data)
    return RetrainResult(data, tag, records, path)


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class _Receiver:
    """Shared accept loop: handshake as responder, then one transfer per connection."""

    def __init__(self, registry: TrustRegistry, handlers, host: str, port: int, timeout: float, max_skew: float):
        self.registry = registry
        self.handlers = handlers
        self.timeout = timeout
        self.max_skew = max_skew
        self.accepted: list[VersionTag] = []
        self.rejected: list[RejectCode] = []
        self._lock = threading.Lock()
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                outer.serve_connection(self.request)

        self._server = _Server((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def serve_connection(self, sock: socket.socket) -> VersionTag | None:
        try:
            session = respond(sock, self.registry, self.timeout)
            tag = receive(session, self.registry, self.handlers, self.max_skew)
            with self._lock:
                self.accepted.append(tag)
            return tag
        except ProtocolError as exc:
            with self._lock:
                self.rejected.append(exc.code)
            log.warning("transfer refused: %s", exc)
            return None
        except OSError as exc:
            log.warning("connection error: %s", exc)
            return None
        finally:
            try:
                sock.close()
            except OSError:
                pass

    def start(self) -> "_Receiver":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class FogService(_Receiver):
    """Accepts DVT-tagged data files from registered edges."""

    def __init__(self, registry: TrustRegistry, store: FogStore, host: str = "127.0.0.1", port: int = 0,
                 timeout: float = 10.0, max_skew: float = 300.0,
                 on_data: Callable[[VersionTag, Path], None] | None = None):
        self.store = store

        def handle(session: Session, tag: VersionTag, data: bytes) -> None:
            path = store.save_data(tag, data)
            if on_data is not None:
                on_data(tag, path)

        super().__init__(registry, {TagKind.DVT: handle}, host, port, timeout, max_skew)


def counter_path(model_path: str | Path) -> Path:
    """Sidecar holding the TMVT counter of the model file it sits next to."""
    return Path(f"{model_path}.counter")


def read_installed_counter(model_path: str | Path) -> int | None:
    try:
        return int(counter_path(model_path).read_text().strip())
    except (OSError, ValueError):
        return None


def install_model(engine, model_path: str | Path | None) -> Callable[[Session, VersionTag, bytes], None]:
    """Handler that verifies a pushed model, persists it, then swaps it in."""

    def handle(session: Session, tag: VersionTag, data: bytes) -> None:
        try:
            model = deserialize_model(data, expected_schema_hash=MQTT_SCHEMA_HASH)
        except SchemaMismatchError as exc:
            raise ProtocolError(RejectCode.SCHEMA_MISMATCH, str(exc)) from None
        except ModelFormatError as exc:
            raise ProtocolError(RejectCode.CORRUPT, str(exc)) from None
        if engine is not None:
            try:
                check_model_schema(model)
            except ModelRefused as exc:
                raise ProtocolError(RejectCode.SCHEMA_MISMATCH, str(exc)) from None
        if model_path is not None:
            write_atomic(model_path, data)
            write_atomic(counter_path(model_path), f"{tag.counter}\n")
        if engine is not None:
            engine.swap_model(model, tag)

    return handle


class EdgeUpdateService(_Receiver):
    """Accepts TMVT-tagged models from the fog and installs them into the engine."""

    def __init__(self, registry: TrustRegistry, engine, model_path: str | Path | None = None,
                 host: str = "127.0.0.1", port: int = 0, timeout: float = 10.0, max_skew: float = 300.0):
        super().__init__(registry, {TagKind.TMVT: install_model(engine, model_path)}, host, port, timeout, max_skew)


def _connect(address: tuple[str, int], timeout: float) -> socket.socket:
    return socket.create_connection(address, timeout=timeout)


def push_data_file(address: tuple[str, int], identity: EdgeEntry, data: bytes, counter: int,
                   timeout: float = 10.0, created_at: int | None = None) -> int:
    sock = _connect(address, timeout)
    try:
        session = initiate(sock, identity, timeout)
        return push(session, TagKind.DVT, data, make_tag(identity, TagKind.DVT, counter, created_at))
    finally:
        sock.close()


def push_model(address: tuple[str, int], identity: EdgeEntry, data: bytes, tag: VersionTag,
               timeout: float = 10.0) -> int:
    sock = _connect(address, timeout)
    try:
        session = initiate(sock, identity, timeout)
        return push(session, TagKind.TMVT, data, tag)
    finally:
        sock.close()


def push_pending(address: tuple[str, int], identity: EdgeEntry, registry: TrustRegistry, files) -> list[int]:
    """Push sealed feature logs in order; each uses the next DVT counter.

    The sender records an acknowledged counter in its own registry so restarts
    continue from there.
    """
    accepted = []
    for path in files:
        counter = registry.last(identity.edge_id, TagKind.DVT) + 1
        got = push_data_file(address, identity, Path(path).read_bytes(), counter)
        registry.compare_and_advance(identity.edge_id, TagKind.DVT, got)
        accepted.append(got)
    return accepted


def wait_until(predicate: Callable[[], bool], timeout: float = 5.0) -> bool:
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        if predicate():
            return True
        time.sleep(0.01)
    return predicate()
