"""Capture sessions: power up, project and capture, collect, upload, power down."""
import asyncio
import enum
import itertools
import json
import logging
import time
from dataclasses import dataclass, field

from ..graycode import generate_patterns
from ..pgm import PGMError, decode_pgm
from .client import CameraClient, DeviceUnavailable, ProjectorClient, RelayClient
from .devices import CameraSim, HeartbeatEndpoint, ProjectorSim, RelayBoardSim
from .failover import PRIMARY, ControllerRole, failover_step
from .protocol import ProtocolError
from .relay import default_port_map, resolve_port

log = logging.getLogger(__name__)


class State(enum.Enum):
    IDLE = "Idle"
    POWERING_ON = "PoweringOn"
    PROJECTING = "Projecting"
    CAPTURING = "Capturing"
    COLLECTING = "Collecting"
    UPLOADING = "Uploading"
    POWERING_OFF = "PoweringOff"
    DONE = "Done"
    FAILED = "Failed"


ORDER = [State.IDLE, State.POWERING_ON, State.PROJECTING, State.CAPTURING, State.COLLECTING,
         State.UPLOADING, State.POWERING_OFF, State.DONE]
TERMINAL = (State.DONE, State.FAILED)


class SessionError(Exception):
    pass


class SessionBusy(SessionError):
    pass


class NotPrimary(SessionError):
    pass


@dataclass
class CaptureSession:
    id: str
    state: State = State.IDLE
    transitions: list = field(default_factory=list)
    manifest: dict = None
    artifacts: list = field(default_factory=list)
    reason: str = None

    def __post_init__(self):
        self.transitions.append((State.IDLE, time.monotonic()))

    def advance(self, new):
        if self.state in TERMINAL:
            raise SessionError(f"session {self.id} already {self.state.value}")
        if new != State.FAILED and ORDER.index(new) != ORDER.index(self.state) + 1:
            raise SessionError(f"illegal transition {self.state.value} -> {new.value}")
        self.state = new
        self.transitions.append((new, time.monotonic()))
        log.info(json.dumps({"event": "session_state", "session": self.id, "state": new.value}))

    def fail(self, reason):
        self.reason = reason
        self.advance(State.FAILED)

    @property
    def window(self):
        """(enter PoweringOn, terminal time): the span in which devices may be powered."""
        times = dict((s, t) for s, t in self.transitions)
        start = times.get(State.POWERING_ON)
        end = times.get(State.DONE, times.get(State.FAILED))
        return start, end


async def _gather_all(*aws):
    """Barrier: wait for every awaitable, then raise the first failure if any."""
    results = await asyncio.gather(*aws, return_exceptions=True)
    for r in results:
        if isinstance(r, BaseException):
            raise r
    return results


@dataclass
class Endpoints:
    """Where each device listens: ``{device_id: (host, port)}`` plus the relay."""
    relay: tuple
    devices: dict


class Controller:
    """One controller PC. Runs at most one session at a time, and only as primary."""

    def __init__(self, endpoints, port_map, role=None, timeout=2.0, retries=3, backoff=0.25,
                 controller_id="pc0"):
        self.endpoints = endpoints
        self.port_map = port_map
        self.role = role or ControllerRole(PRIMARY)
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.controller_id = controller_id
        self._active = None
        self._ids = itertools.count(1)

    @property
    def active_session(self):
        return self._active

    def _client_kw(self):
        return dict(timeout=self.timeout, retries=self.retries, backoff=self.backoff,
                    controller_id=self.controller_id)

    def _client(self, cls, device_id):
        try:
            host, port = self.endpoints.devices[device_id]
        except KeyError:
            raise SessionError(f"no endpoint for device {device_id!r}") from None
        return cls(host, port, device_id, **self._client_kw())

    async def run_session(self, rig, spec, sink, projector_id=None, session_id=None,
                          postprocess=None):
        """Run one full capture session; returns the session (Done or Failed).

        For each pattern the projector is told to SHOW it and then every camera
        captures; all captures finish before the next pattern goes up.
        ``postprocess(stacks)`` may return extra ``{relative_path: bytes}`` to
        upload alongside the images (e.g. a reconstruction).
        """
        if self.role.role != PRIMARY:
            raise NotPrimary(f"{self.controller_id} is {self.role.role}")
        if self._active is not None:
            raise SessionBusy(f"session {self._active.id} is still running")
        session = CaptureSession(session_id or f"{self.controller_id}-{next(self._ids):04d}")
        self._active = session
        cameras = [c.id for c in rig.cameras]
        projector_id = projector_id or rig.projectors[0].id
        rig.projector(projector_id)
        patterns = generate_patterns(spec)
        relay = RelayClient(*self.endpoints.relay, **self._client_kw())
        projector = self._client(ProjectorClient, projector_id)
        cams = {cid: self._client(CameraClient, cid) for cid in cameras}
        raw = {cid: {} for cid in cameras}
        try:
            session.advance(State.POWERING_ON)
            for cid in cameras:
                await relay.set(resolve_port(cid, self.port_map), True)
            await relay.set(resolve_port(projector_id, self.port_map), True)
            await _gather_all(projector.hello(), *(c.hello() for c in cams.values()))

            session.advance(State.PROJECTING)
            await projector.blank()

            session.advance(State.CAPTURING)
            for pat in patterns:
                await projector.show(pat.index)
                frames = await _gather_all(*(c.capture(session.id, pat.index)
                                             for c in cams.values()))
                for cid, data in zip(cams, frames):
                    raw[cid][pat.index] = data
            await projector.blank()

            session.advance(State.COLLECTING)
            stacks = {}
            for cid in cameras:
                imgs = [decode_pgm(raw[cid][p.index]) for p in patterns]
                if len({im.shape for im in imgs}) != 1:
                    raise SessionError(f"camera {cid} returned frames of differing size")
                stacks[cid] = imgs

            session.advance(State.UPLOADING)
            sink.begin(session.id)
            images = []
            for cid in cameras:
                for p in patterns:
                    rel = sink.put_image(cid, p.index, raw[cid][p.index])
                    images.append({"camera": cid, "pattern_index": p.index, "file": rel,
                                   "sha256": sink.hashes[rel]})
            extra = postprocess(stacks) if postprocess else {}
            for rel, data in sorted(extra.items()):
                sink.put_file(rel, data)
            session.manifest = {
                "version": 1,
                "session_id": session.id,
                "controller": self.controller_id,
                "projector_id": projector_id,
                "cameras": cameras,
                "patterns": patterns.manifest(),
                "images": images,
                "extra": sorted(extra),
            }
            sink.put_manifest(session.manifest)
            final = sink.commit()
            session.artifacts = [str(final / im["file"]) for im in images] + [str(final / "manifest.json")]

            session.advance(State.POWERING_OFF)
            await self._power_down(relay, cameras, projector_id)
            session.advance(State.DONE)
        except (DeviceUnavailable, ProtocolError, SessionError, PGMError, OSError) as exc:
            session.artifacts = [f"{cid}/pat{i:03d}" for cid in cameras for i in sorted(raw[cid])]
            if hasattr(sink, "abort"):
                sink.abort()
            await self._cleanup(relay, projector, cameras, projector_id)
            session.fail(f"{type(exc).__name__}: {exc}")
            log.warning(json.dumps({"event": "session_failed", "session": session.id,
                                    "reason": session.reason}))
        finally:
            for c in (relay, projector, *cams.values()):
                await c.close()
            self._active = None
        return session

    async def _power_down(self, relay, cameras, projector_id):
        await relay.set(resolve_port(projector_id, self.port_map), False)
        for cid in cameras:
            await relay.set(resolve_port(cid, self.port_map), False)

    async def _cleanup(self, relay, projector, cameras, projector_id):
        # projector off first: light attracts fish
        try:
            await asyncio.wait_for(projector.blank(), self.timeout)
        except Exception:  # noqa: BLE001 - best effort, power is cut next anyway
            pass
        try:
            await self._power_down(relay, cameras, projector_id)
        except (DeviceUnavailable, ProtocolError, OSError) as exc:
            log.error(json.dumps({"event": "cleanup_failed", "reason": str(exc)}))

    def apply_heartbeat(self, last_heartbeat_age):
        self.role = failover_step(self.role, last_heartbeat_age)
        return self.role


class SimulatedPlant:
    """In-process relay board, projectors and cameras for a rig, on ephemeral ports.

    Devices only answer (beyond HELLO) while their relay port is on.
    """

    def __init__(self, rig, frame_source=None, host="127.0.0.1", ports=None):
        self.rig = rig
        self.host = host
        self.ports = ports or {}
        self.port_map = default_port_map([c.id for c in rig.cameras], [p.id for p in rig.projectors])
        self.relay = RelayBoardSim()
        self.projectors = {}
        self.cameras = {}
        for p in rig.projectors:
            self.projectors[p.id] = ProjectorSim(p.id, powered=self._power_probe(p.id))
        first_proj = next(iter(self.projectors.values()), None)
        for c in rig.cameras:
            src = frame_source(c.id) if frame_source else None
            self.cameras[c.id] = CameraSim(c.id, frame_source=src, projector=first_proj,
                                           powered=self._power_probe(c.id))
        self.heartbeat = HeartbeatEndpoint("pc1")

    def _power_probe(self, device_id):
        idx = self.port_map[device_id]
        return lambda: self.relay.ports[idx]

    @property
    def all_devices(self):
        return [self.relay, *self.projectors.values(), *self.cameras.values()]

    async def start(self):
        await self.relay.start(self.host, self.ports.get(self.relay.device_id, 0))
        for dev in [*self.projectors.values(), *self.cameras.values(), self.heartbeat]:
            await dev.start(self.host, self.ports.get(dev.device_id, 0))
        return self.endpoints()

    async def stop(self):
        for dev in [*self.all_devices, self.heartbeat]:
            await dev.stop()

    def endpoints(self):
        devs = {d.device_id: (self.host, d.port)
                for d in [*self.projectors.values(), *self.cameras.values()]}
        return Endpoints((self.host, self.relay.port), devs)

    def projector_on_intervals(self):
        """[(on_time, off_time or None)] for every projector port."""
        proj_ports = {self.port_map[p] for p in self.projectors}
        spans, open_at = [], {}
        for t, port, on in self.relay.events:
            if port not in proj_ports:
                continue
            if on:
                open_at[port] = t
            elif port in open_at:
                spans.append((open_at.pop(port), t))
        spans.extend((t, None) for t in open_at.values())
        return spans
