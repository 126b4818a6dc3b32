"""When to start the next capture session."""
import datetime as dt
from dataclasses import dataclass

MIN_INTERVAL = 60.0
ON_DEMAND = "on_demand"
INTERVAL = "interval"
DAILY = "daily"


@dataclass(frozen=True)
class Schedule:
    mode: str = ON_DEMAND
    interval: float = None
    time_of_day: dt.time = None
    enabled: bool = True

    def __post_init__(self):
        if self.mode == INTERVAL:
            if self.interval is None or self.interval < MIN_INTERVAL:
                raise ValueError(f"interval must be at least {MIN_INTERVAL:g} s")
        elif self.mode == DAILY:
            if self.time_of_day is None:
                raise ValueError("daily schedule needs a time of day")
        elif self.mode != ON_DEMAND:
            raise ValueError(f"unknown schedule mode {self.mode!r}")

    @classmethod
    def parse(cls, text):
        """``on_demand``, ``interval:<seconds>`` or ``daily:HH:MM``."""
        kind, _, arg = text.partition(":")
        if kind == ON_DEMAND and not arg:
            return cls(ON_DEMAND)
        if kind == INTERVAL:
            return cls(INTERVAL, interval=float(arg))
        if kind == DAILY:
            return cls(DAILY, time_of_day=dt.time.fromisoformat(arg))
        raise ValueError(f"bad schedule {text!r}")


@dataclass(frozen=True)
class Trigger:
    pass


@dataclass(frozen=True)
class Wait:
    seconds: float  # None means wait for an explicit request


def scheduler_tick(now, schedule, last_run):
    """Pure decision: start a session now, or how long to wait.

    Interval mode fires once ``now - last_run >= interval`` (or immediately
    if nothing has run). Daily mode fires on the first tick at or after the
    configured time that has not already run since that time today.
    """
    if not schedule.enabled or schedule.mode == ON_DEMAND:
        return Wait(None)
    if schedule.mode == INTERVAL:
        if last_run is None:
            return Trigger()
        elapsed = (now - last_run).total_seconds()
        if elapsed >= schedule.interval:
            return Trigger()
        return Wait(schedule.interval - elapsed)
    slot = dt.datetime.combine(now.date(), schedule.time_of_day, tzinfo=now.tzinfo)
    if now >= slot:
        if last_run is None or last_run < slot:
            return Trigger()
        slot += dt.timedelta(days=1)
    return Wait((slot - now).total_seconds())
