"""Primary/backup controller roles and heartbeat-driven takeover."""
import asyncio
import logging
from dataclasses import dataclass, replace

log = logging.getLogger(__name__)

PRIMARY = "primary"
BACKUP = "backup"


@dataclass(frozen=True)
class ControllerRole:
    role: str = BACKUP
    heartbeat_period: float = 1.0
    takeover_timeout: float = 5.0

    def __post_init__(self):
        if self.role not in (PRIMARY, BACKUP):
            raise ValueError(f"unknown role {self.role!r}")
        if self.heartbeat_period <= 0:
            raise ValueError("heartbeat period must be positive")
        if self.takeover_timeout < 3 * self.heartbeat_period:
            raise ValueError("takeover timeout must be at least 3 heartbeat periods")


def failover_step(state, last_heartbeat_age):
    """A backup whose peer has been silent longer than the timeout becomes primary.

    Primaries never step down on their own.
    """
    if state.role == BACKUP and last_heartbeat_age is not None \
            and last_heartbeat_age > state.takeover_timeout:
        return replace(state, role=PRIMARY)
    return state


@dataclass
class _Node:
    name: str
    role: ControllerRole
    alive: bool = True
    last_heard: float = 0.0
    next_beat: float = 0.0


def simulate_pair(kill_at, until, heartbeat_period=1.0, takeover_timeout=5.0, dt=None,
                  latency=0.0):
    """Discrete-event run of a primary/backup pair with the primary killed at ``kill_at``.

    Returns ``[(t, n_live_primaries, roles)]`` sampled every ``dt``.
    """
    dt = dt or heartbeat_period / 10.0
    a = _Node("pc0", ControllerRole(PRIMARY, heartbeat_period, takeover_timeout))
    b = _Node("pc1", ControllerRole(BACKUP, heartbeat_period, takeover_timeout))
    nodes = (a, b)
    timeline = []
    steps = int(round(until / dt))
    for k in range(steps + 1):
        t = k * dt
        if t >= kill_at:
            a.alive = False
        for node, peer in ((a, b), (b, a)):
            if node.alive and node.role.role == PRIMARY and t >= node.next_beat:
                if peer.alive:
                    peer.last_heard = t + latency
                node.next_beat = t + heartbeat_period
        for node in nodes:
            if node.alive:
                node.role = failover_step(node.role, max(0.0, t - node.last_heard))
        live_primaries = sum(n.alive and n.role.role == PRIMARY for n in nodes)
        timeline.append((t, live_primaries, tuple((n.name, n.role.role, n.alive) for n in nodes)))
    return timeline


async def send_heartbeats(client, get_role, period, stop):
    """Primary side: BEAT the peer every ``period`` seconds until ``stop`` is set.

    A missed beat is logged and skipped; the peer decides what silence means.
    """
    seq = 0
    while not stop.is_set():
        role = get_role()
        if role.role == PRIMARY:
            try:
                await client.beat(role.role, seq)
            except Exception as exc:  # noqa: BLE001 - peer may be down; keep beating
                log.debug("heartbeat %d not delivered: %s", seq, exc)
            seq += 1
        try:
            await asyncio.wait_for(stop.wait(), period)
        except asyncio.TimeoutError:
            pass


async def watch_heartbeats(endpoint, controller, period, stop, clock, started):
    """Backup side: every ``period`` feed the age of the last BEAT into ``failover_step``."""

    while not stop.is_set():
        last = endpoint.last_beat if endpoint.last_beat is not None else started
        controller.apply_heartbeat(clock() - last)
        try:
            await asyncio.wait_for(stop.wait(), period)
        except asyncio.TimeoutError:
            pass
