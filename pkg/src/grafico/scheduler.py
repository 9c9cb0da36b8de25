"""Device-slot scheduler: a fixed pool of (device, slot) execution tokens.

Acquisition blocks in arrival order when the pool is saturated, placement
prefers the least-occupied device (ties broken by lowest device id), and every
acquire/release is traced so tests can audit safety and fairness.
"""

from __future__ import annotations

import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

VISIBLE_DEVICES_ENV = "GRAFICO_VISIBLE_DEVICES"


class NoVisibleDevicesError(ValueError):
    """Device list empty after visibility filtering."""


class AcquireTimeoutError(TimeoutError):
    """Deadline expired before a slot became free."""


class PoolClosedError(RuntimeError):
    pass


class DoubleReleaseError(RuntimeError):
    """Lease released twice, or never live."""


@dataclass(frozen=True)
class SlotLease:
    device_id: int
    slot_index: int
    lease_id: int


@dataclass
class SlotEvent:
    action: str  # "enqueue" | "acquire" | "release"
    device: int
    slot: int
    lease_id: int
    ticket: Optional[int] = None  # wait-queue ticket, for fairness audits
    timestamp: float = field(default_factory=time.monotonic)

    def as_dict(self) -> dict:
        out = {
            "kind": "slot",
            "action": self.action,
            "device": self.device,
            "slot": self.slot,
            "lease_id": self.lease_id,
        }
        if self.ticket is not None:
            out["ticket"] = self.ticket
        return out


class _Waiter:
    __slots__ = ("event", "lease", "ticket")

    def __init__(self, ticket: int):
        self.event = threading.Event()
        self.lease: Optional[SlotLease] = None
        self.ticket = ticket


def _parse_filter(spec: str) -> list[int]:
    return [int(part) for part in spec.split(",") if part.strip() != ""]


class DevicePool:
    """Thread-safe pool of (device, slot) tokens with FIFO blocking acquisition."""

    def __init__(
        self,
        device_ids: Sequence[int],
        slots_per_device: int = 3,
        visible_filter: Optional[str] = None,
        event_sink: Optional[Callable[[dict], None]] = None,
    ):
        if slots_per_device < 1:
            raise ValueError("slots_per_device must be positive")
        if any(d < 0 for d in device_ids):
            raise ValueError("device ids must be non-negative")
        if visible_filter is None:
            visible_filter = os.environ.get(VISIBLE_DEVICES_ENV)
        if visible_filter is not None:
            visible = set(_parse_filter(visible_filter))
            device_ids = [d for d in device_ids if d in visible]
        if not device_ids:
            raise NoVisibleDevicesError("no devices visible after filtering")

        self.slots_per_device = slots_per_device
        self._devices = sorted(dict.fromkeys(device_ids))
        self._lock = threading.Lock()
        self._free: dict[int, set[int]] = {
            d: set(range(slots_per_device)) for d in self._devices
        }
        self._live: set[int] = set()
        self._waiters: deque[_Waiter] = deque()
        self._next_lease_id = 0
        self._next_ticket = 0
        self._closed = False
        self._events: list[SlotEvent] = []
        self._event_sink = event_sink

    @property
    def devices(self) -> list[int]:
        return list(self._devices)

    def _record(
        self, action: str, lease: SlotLease, ticket: Optional[int] = None
    ) -> None:
        event = SlotEvent(
            action, lease.device_id, lease.slot_index, lease.lease_id, ticket
        )
        self._events.append(event)
        if self._event_sink is not None:
            self._event_sink(event.as_dict())

    def _grant_locked(self, ticket: Optional[int] = None) -> SlotLease:
        # Least-occupied device, then lowest id.
        device = max(self._devices, key=lambda d: (len(self._free[d]), -d))
        slot = min(self._free[device])
        self._free[device].remove(slot)
        lease = SlotLease(device, slot, self._next_lease_id)
        self._next_lease_id += 1
        self._live.add(lease.lease_id)
        self._record("acquire", lease, ticket)
        return lease

    def acquire(self, deadline: Optional[float] = None) -> SlotLease:
        """Blocking acquire; ``deadline`` is a timeout in seconds (0 = try once)."""
        with self._lock:
            if self._closed:
                raise PoolClosedError("pool is closed")
            if not self._waiters and any(self._free[d] for d in self._devices):
                return self._grant_locked()
            waiter = _Waiter(self._next_ticket)
            self._next_ticket += 1
            self._waiters.append(waiter)
            self._events.append(SlotEvent("enqueue", -1, -1, -1, waiter.ticket))
        if waiter.event.wait(timeout=deadline):
            assert waiter.lease is not None
            return waiter.lease
        with self._lock:
            if waiter.lease is not None:
                # Granted between timeout and re-lock; hand it back out.
                return waiter.lease
            self._waiters.remove(waiter)
        raise AcquireTimeoutError("no slot became free before the deadline")

    def release(self, lease: SlotLease) -> None:
        with self._lock:
            if lease.lease_id not in self._live:
                raise DoubleReleaseError(f"lease {lease.lease_id} is not live")
            self._live.remove(lease.lease_id)
            self._free[lease.device_id].add(lease.slot_index)
            self._record("release", lease)
            if self._waiters:
                waiter = self._waiters.popleft()
                waiter.lease = self._grant_locked(waiter.ticket)
                waiter.event.set()

    def occupancy(self) -> dict:
        """Point-in-time snapshot: per-device occupied counts plus waiter count."""
        with self._lock:
            return {
                "devices": {
                    d: self.slots_per_device - len(self._free[d]) for d in self._devices
                },
                "waiters": len(self._waiters),
            }

    def close(self) -> None:
        with self._lock:
            self._closed = True

    def events(self) -> list[SlotEvent]:
        with self._lock:
            return list(self._events)


def new_pool(
    device_ids: Sequence[int],
    slots_per_device: int = 3,
    visible_filter: Optional[str] = None,
    event_sink: Optional[Callable[[dict], None]] = None,
) -> DevicePool:
    return DevicePool(device_ids, slots_per_device, visible_filter, event_sink)
