"""Controller-side connections to devices, with reconnect-and-retry."""
import asyncio
import logging

from . import protocol
from .protocol import ProtocolError, encode

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 2.0
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF = 0.25


class DeviceUnavailable(Exception):
    """Transport failed and retries ran out."""


class DeviceClient:
    """One persistent connection to a device.

    Transport errors and timeouts trigger a reconnect; each request is tried
    once plus ``retries`` more times, sleeping ``backoff * 2**k`` between
    attempts. ERR replies are not retried.
    """

    def __init__(self, host, port, device_type, device_id, timeout=DEFAULT_TIMEOUT,
                 retries=DEFAULT_RETRIES, backoff=DEFAULT_BACKOFF, controller_id="pc0"):
        self.host = host
        self.port = port
        self.device_type = device_type
        self.device_id = device_id
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.controller_id = controller_id
        self.firmware = None
        self._reader = None
        self._writer = None

    async def _open(self):
        self._reader, self._writer = await asyncio.wait_for(
            asyncio.open_connection(self.host, self.port), self.timeout)
        self._writer.write(encode(f"HELLO {self.device_type} {self.device_id}"))
        await self._writer.drain()
        reply = await asyncio.wait_for(self._reader.readline(), self.timeout)
        if not reply:
            raise ConnectionResetError("device closed during HELLO")
        args = protocol.parse_ok(reply)
        self.firmware = args[0] if args else ""

    async def close(self):
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except (ConnectionError, OSError):
                pass
        self._reader = self._writer = None

    async def _exchange(self, line, payload):
        if self._writer is None:
            await self._open()
        self._writer.write(encode(line))
        await self._writer.drain()
        reply = await asyncio.wait_for(self._reader.readline(), self.timeout)
        if not reply:
            raise ConnectionResetError(f"{self.device_id} closed the connection")
        args = protocol.parse_ok(reply)
        if not payload:
            return args, None
        if not args or not args[0].isdigit():
            raise ProtocolError(f"expected byte count, got {reply!r}")
        data = await asyncio.wait_for(self._reader.readexactly(int(args[0])), self.timeout)
        return args, data

    async def request(self, line, payload=False):
        """Send one command; returns ``(ok_args, payload_bytes_or_None)``."""
        last = None
        for attempt in range(self.retries + 1):
            if attempt:
                await asyncio.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                return await self._exchange(line, payload)
            except ProtocolError:
                raise
            except (OSError, asyncio.TimeoutError, asyncio.IncompleteReadError) as exc:
                last = exc
                log.debug("%s: %r failed (%s), attempt %d", self.device_id, line,
                          type(exc).__name__, attempt + 1)
                await self.close()
        raise DeviceUnavailable(f"{self.device_id}: {line.split()[0]} failed after "
                                f"{self.retries + 1} attempts ({type(last).__name__})")

    async def hello(self):
        if self._writer is None:
            for attempt in range(self.retries + 1):
                if attempt:
                    await asyncio.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    await self._open()
                    return self.firmware
                except ProtocolError:
                    raise
                except (OSError, asyncio.TimeoutError) as exc:
                    last = exc
                    await self.close()
            raise DeviceUnavailable(f"{self.device_id}: HELLO failed ({type(last).__name__})")
        return self.firmware


class RelayClient(DeviceClient):
    def __init__(self, host, port, device_id="relay0", **kw):
        super().__init__(host, port, "relay", device_id, **kw)

    async def set(self, port, on):
        args, _ = await self.request(f"SET {int(port)} {'ON' if on else 'OFF'}")
        return protocol.parse_state(args[0])

    async def get(self):
        args, _ = await self.request("GET")
        return protocol.parse_state(args[0])


class ProjectorClient(DeviceClient):
    def __init__(self, host, port, device_id, **kw):
        super().__init__(host, port, "projector", device_id, **kw)

    async def show(self, index):
        await self.request(f"SHOW {int(index)}")

    async def blank(self):
        await self.request("BLANK")


class CameraClient(DeviceClient):
    def __init__(self, host, port, device_id, **kw):
        super().__init__(host, port, "camera", device_id, **kw)

    async def capture(self, session_id, index):
        _, data = await self.request(f"CAPTURE {session_id} {int(index)}", payload=True)
        return data


class HeartbeatClient(DeviceClient):
    def __init__(self, host, port, peer_id="pc1", **kw):
        super().__init__(host, port, "controller", peer_id, **kw)

    async def beat(self, role, seq):
        await self.request(f"BEAT {role} {int(seq)}")
