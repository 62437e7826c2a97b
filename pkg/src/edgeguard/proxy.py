"""Asyncio TCP relay placing the engine between MQTT clients and a broker."""

from __future__ import annotations

import asyncio
import logging
import time

from .engine import Blocked, Conn, Engine, Forwarded, Intercepted, IpsAction
from .firewall import BlockReason
from .mqtt import codec

log = logging.getLogger(__name__)

# A frame still incomplete past this many buffered bytes is judged as-is.
MAX_PENDING = 1 << 20


class EdgeProxy:
    def __init__(
        self,
        engine: Engine,
        broker: tuple[str, int],
        listen: tuple[str, int] = ("127.0.0.1", 1883),
        connect_timeout: float = 5.0,
    ):
        self.engine = engine
        self.broker = broker
        self.listen = listen
        self.connect_timeout = connect_timeout
        self._server: asyncio.base_events.Server | None = None
        self._tasks: set[asyncio.Task] = set()

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._handle, *self.listen)

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for t in list(self._tasks):
            t.cancel()

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        task = asyncio.current_task()
        self._tasks.add(task)
        peer = writer.get_extra_info("peername")
        sock = writer.get_extra_info("sockname")
        conn = Conn(f"{peer[0]}:{peer[1]}", peer[0], sock[1])
        upstream: asyncio.StreamWriter | None = None
        pump: asyncio.Task | None = None
        buf = b""
        try:
            while True:
                chunk = await reader.read(65536)
                eof = not chunk
                buf += chunk
                while buf:
                    item, used = codec.parse_frame(buf, eof=eof or len(buf) > MAX_PENDING)
                    if item is codec.NEED_MORE:
                        break
                    frame, buf = buf[:used], buf[used:]
                    if not frame:
                        buf = b""
                        break
                    d = self.engine.process_packet(conn, frame, time.time())
                    if isinstance(d, Forwarded):
                        if upstream is None:
                            try:
                                up_reader, upstream = await asyncio.wait_for(
                                    asyncio.open_connection(*self.broker), self.connect_timeout
                                )
                            except (OSError, asyncio.TimeoutError) as exc:
                                self.engine.relay_failed(conn, time.time(), str(exc) or type(exc).__name__)
                                return
                            pump = asyncio.create_task(self._pump(up_reader, writer))
                        try:
                            upstream.write(frame)
                            await upstream.drain()
                        except OSError as exc:
                            self.engine.relay_failed(conn, time.time(), str(exc))
                            return
                    elif isinstance(d, Intercepted):
                        if d.action is IpsAction.RESET_CONNECTION:
                            return
                        if d.action is IpsAction.FORWARD_TO_SOURCE:
                            writer.write(frame)
                            await writer.drain()
                    elif isinstance(d, Blocked) and d.reason is not BlockReason.RATE_LIMIT:
                        return
                if eof:
                    return
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            # Both legs close together; this is also how a reset is delivered.
            for w in (writer, upstream):
                if w is not None:
                    w.close()
            if pump is not None:
                pump.cancel()
            self.engine.conns.close(conn.src_ip, conn.conn_id)
            self._tasks.discard(task)

    @staticmethod
    async def _pump(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                writer.write(data)
                await writer.drain()
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            writer.close()
