"""Minimal MQTT sink broker: acknowledges what it must and discards everything else."""

from __future__ import annotations

import asyncio

from ..mqtt import codec


class SinkBroker:
    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.host = host
        self.requested_port = port
        self.received = 0
        self._server: asyncio.base_events.Server | None = None

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._handle, self.host, self.requested_port)

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        buf = b""
        try:
            while True:
                chunk = await reader.read(65536)
                if not chunk:
                    break
                buf += chunk
                while True:
                    item, used = codec.parse_frame(buf)
                    if item is codec.NEED_MORE:
                        break
                    buf = buf[used:]
                    self.received += 1
                    reply = self._reply(item)
                    if reply:
                        writer.write(reply)
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            writer.close()

    @staticmethod
    def _reply(item) -> bytes:
        if not isinstance(item, codec.MqttPacket):
            return b""
        t = item.msg_type
        if t == codec.CONNECT:
            return codec.connack(0)
        if t == codec.PINGREQ:
            return codec.pingresp()
        if t == codec.SUBSCRIBE:
            return codec.suback(item.message_id, [q for _, q in item.subscriptions])
        if t == codec.PUBLISH and item.qos == 1:
            return codec.msgid_packet(codec.PUBACK, item.message_id)
        return b""
