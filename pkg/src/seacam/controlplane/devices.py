"""asyncio TCP simulators for the relay board, projectors, cameras and the
controller heartbeat endpoint. Each serves any number of sequential or
concurrent connections on one listening socket."""
import asyncio
import logging
import time

import numpy as np

from ..pgm import encode_pgm
from . import protocol
from .protocol import ProtocolError, encode, format_state, nonneg_int

log = logging.getLogger(__name__)


class DeviceSimulator:
    device_type = "device"

    def __init__(self, device_id, firmware="sim-1.0", powered=None, clock=time.monotonic):
        self.device_id = device_id
        self.firmware = firmware
        self.powered = powered or (lambda: True)
        self.clock = clock
        self.host = None
        self.port = None
        self.dead = False
        self.hung = False
        self.commands = []
        self._server = None
        self._writers = set()
        self._released = None

    async def start(self, host="127.0.0.1", port=0):
        self._released = asyncio.Event()
        self._server = await asyncio.start_server(self._serve, host, port)
        sock = self._server.sockets[0].getsockname()
        self.host, self.port = sock[0], sock[1]
        return self.port

    async def stop(self):
        if self._server is not None:
            self._released.set()
            self._server.close()
            for w in list(self._writers):
                w.close()
            await self._server.wait_closed()
            self._server = None

    def kill(self):
        """Simulate a hardware failure: drop every connection and stop answering."""
        self.dead = True
        for w in list(self._writers):
            w.close()

    def revive(self):
        self.dead = False
        self.hung = False

    async def _serve(self, reader, writer):
        if self.dead:
            writer.close()
            return
        self._writers.add(writer)
        try:
            while not self.dead:
                line = await reader.readline()
                if not line:
                    break
                if self.dead:
                    break
                if self.hung:
                    await self._released.wait()
                    break
                reply = self._dispatch(line)
                if reply is None:
                    break
                writer.write(reply)
                await writer.drain()
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            self._writers.discard(writer)
            writer.close()

    def _dispatch(self, line):
        try:
            verb, args = protocol.split(line)
        except ProtocolError as exc:
            return encode(f"ERR {exc}")
        self.commands.append((self.clock(), verb, tuple(args)))
        if verb == "HELLO":
            if len(args) != 2:
                return encode("ERR usage: HELLO <device-type> <id>")
            return encode(f"OK {self.firmware}")
        if not self.powered():
            return encode("ERR no-power")
        try:
            return self.handle(verb, args)
        except (ValueError, IndexError) as exc:
            return encode(f"ERR {exc}")

    def handle(self, verb, args):
        return encode(f"ERR unknown command {verb}")


class RelayBoardSim(DeviceSimulator):
    """16 power switches, all off at start. ``events`` logs (time, port, on)."""
    device_type = "relay"

    def __init__(self, device_id="relay0", **kw):
        super().__init__(device_id, **kw)
        self.ports = [False] * protocol.RELAY_PORTS
        self.events = []

    @property
    def bits(self):
        return sum(1 << i for i, on in enumerate(self.ports) if on)

    def is_on(self, port):
        return self.ports[port]

    def handle(self, verb, args):
        if verb == "GET":
            if args:
                return encode("ERR usage: GET")
            return encode(f"OK {format_state(self.bits)}")
        if verb == "SET":
            if len(args) != 2 or args[1].upper() not in ("ON", "OFF"):
                return encode("ERR usage: SET <port> ON|OFF")
            port = nonneg_int(args[0])
            if port >= protocol.RELAY_PORTS:
                return encode(f"ERR unknown port {port}")
            on = args[1].upper() == "ON"
            if self.ports[port] != on:
                self.ports[port] = on
                self.events.append((self.clock(), port, on))
            return encode(f"OK {format_state(self.bits)}")
        return super().handle(verb, args)


class ProjectorSim(DeviceSimulator):
    """Tracks what is on screen. ``fail_after`` drops the link on the (n+1)-th SHOW."""
    device_type = "projector"

    def __init__(self, device_id, fail_after=None, **kw):
        super().__init__(device_id, **kw)
        self.showing = None
        self.history = []
        self.shows = 0
        self.fail_after = fail_after

    def handle(self, verb, args):
        if verb == "SHOW":
            if len(args) != 1:
                return encode("ERR usage: SHOW <pattern-index>")
            if self.fail_after is not None and self.shows >= self.fail_after:
                log.info("projector %s dropping connection (injected fault)", self.device_id)
                self.kill()
                return None
            self.shows += 1
            self.showing = nonneg_int(args[0])
            self.history.append((self.clock(), self.showing))
            return encode("OK")
        if verb == "BLANK":
            self.showing = None
            self.history.append((self.clock(), None))
            return encode("OK")
        return super().handle(verb, args)


def flat_frame(width=32, height=24):
    def source(pattern_index):
        return np.full((height, width), (pattern_index * 37) % 256, dtype=np.uint8)
    return source


class CameraSim(DeviceSimulator):
    """Returns a PGM per CAPTURE.

    ``frame_source(pattern_index)`` supplies the image. ``projector`` (a
    ProjectorSim) is sampled at capture time so tests can check that every
    frame was taken while its own pattern was on screen. ``fail_after`` /
    ``hang_after`` inject a fault on the (n+1)-th capture.
    """
    device_type = "camera"

    def __init__(self, device_id, frame_source=None, projector=None, fail_after=None,
                 hang_after=None, **kw):
        super().__init__(device_id, **kw)
        self.frame_source = frame_source or flat_frame()
        self.projector = projector
        self.fail_after = fail_after
        self.hang_after = hang_after
        self.captures = []

    def handle(self, verb, args):
        if verb == "CAPTURE":
            if len(args) != 2:
                return encode("ERR usage: CAPTURE <session-id> <pattern-index>")
            idx = nonneg_int(args[1])
            n = len(self.captures)
            if self.fail_after is not None and n >= self.fail_after:
                log.info("camera %s dropping connection (injected fault)", self.device_id)
                self.kill()
                return None
            if self.hang_after is not None and n >= self.hang_after:
                self.hung = True
                return b""
            showing = self.projector.showing if self.projector is not None else idx
            self.captures.append((self.clock(), args[0], idx, showing))
            data = encode_pgm(self.frame_source(idx))
            return encode(f"OK {len(data)}") + data
        return super().handle(verb, args)


class HeartbeatEndpoint(DeviceSimulator):
    """The listening side of a controller pair: records the last BEAT time."""
    device_type = "controller"

    def __init__(self, device_id="pc1", **kw):
        super().__init__(device_id, **kw)
        self.last_beat = None
        self.last_seq = None

    def handle(self, verb, args):
        if verb == "BEAT":
            if len(args) != 2 or args[0] not in protocol.ROLES:
                return encode("ERR usage: BEAT primary|backup <seq>")
            self.last_seq = nonneg_int(args[1])
            self.last_beat = self.clock()
            return encode("OK")
        return super().handle(verb, args)
