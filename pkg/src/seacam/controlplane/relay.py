"""Relay board port naming and state."""
import re
from dataclasses import dataclass

from .protocol import RELAY_PORTS

N_CAMERAS = 8
N_PROJECTORS = 3


class UnknownPort(KeyError):
    def __str__(self):
        return f"unknown relay port {self.args[0]!r}"


def default_port_map(camera_ids=(), projector_ids=()):
    """Fixed slot layout: 0-7 cameras, 8-10 projectors, 11-12 PCs, 13-14 switches, 15 spare.

    Rig device ids fill their slots in sorted order; unused slots keep
    placeholder names ``cam<k>`` / ``proj<k>``.
    """
    cams = sorted(camera_ids)
    projs = sorted(projector_ids)
    if len(cams) > N_CAMERAS or len(projs) > N_PROJECTORS:
        raise ValueError(f"relay has slots for {N_CAMERAS} cameras and {N_PROJECTORS} projectors")
    names = []
    for k in range(N_CAMERAS):
        names.append(cams[k] if k < len(cams) else f"cam{k}")
    for k in range(N_PROJECTORS):
        names.append(projs[k] if k < len(projs) else f"proj{k}")
    names += ["pc0", "pc1", "switch0", "switch1", "spare"]
    if len(set(names)) != RELAY_PORTS:
        raise ValueError(f"relay port names collide: {names}")
    return {name: i for i, name in enumerate(names)}


_ALIASES = ((re.compile(r"^camera(\d+)$"), "cam{}"), (re.compile(r"^projector(\d+)$"), "proj{}"))


def resolve_port(port, port_map):
    """Port index for a name, alias (``camera3`` -> ``cam3``) or integer index."""
    if isinstance(port, int) or (isinstance(port, str) and port.isdigit()):
        idx = int(port)
        if not 0 <= idx < RELAY_PORTS:
            raise UnknownPort(port)
        return idx
    if port in port_map:
        return port_map[port]
    for pattern, fmt in _ALIASES:
        m = pattern.match(str(port))
        if m and fmt.format(m.group(1)) in port_map:
            return port_map[fmt.format(m.group(1))]
    raise UnknownPort(port)


@dataclass(frozen=True)
class RelayState:
    bits: int
    port_map: dict

    @property
    def ports(self):
        return tuple(bool(self.bits >> i & 1) for i in range(RELAY_PORTS))

    def is_on(self, port):
        return self.ports[resolve_port(port, self.port_map)]

    def named(self):
        return {name: self.ports[i] for name, i in sorted(self.port_map.items(), key=lambda kv: kv[1])}


async def relay_set(client, port, on, port_map):
    """Switch one port and return the board's full state after the change."""
    idx = resolve_port(port, port_map)
    return RelayState(await client.set(idx, on), port_map)


async def relay_get(client, port_map):
    return RelayState(await client.get(), port_map)
