"""Simulated control plane: relay board, device protocol, sessions, scheduling, failover."""
from .client import DeviceUnavailable
from .failover import BACKUP, PRIMARY, ControllerRole, failover_step, simulate_pair
from .relay import RelayState, UnknownPort, default_port_map, relay_get, relay_set, resolve_port
from .scheduler import Schedule, Trigger, Wait, scheduler_tick
from .session import (CaptureSession, Controller, Endpoints, NotPrimary, SessionBusy,
                      SimulatedPlant, State)
from .sink import DirectorySink, parse_sink

__all__ = [
    "BACKUP", "PRIMARY", "CaptureSession", "Controller", "ControllerRole", "DeviceUnavailable",
    "DirectorySink", "Endpoints", "NotPrimary", "RelayState", "Schedule", "SessionBusy",
    "SimulatedPlant", "State", "Trigger", "UnknownPort", "Wait", "default_port_map",
    "failover_step", "parse_sink", "relay_get", "relay_set", "resolve_port", "scheduler_tick",
    "simulate_pair",
]
