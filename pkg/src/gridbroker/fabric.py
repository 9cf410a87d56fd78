"""Simulated grid fabric: virtual clock, event queue, resources and nodes,
availability and failure schedules, and testbed construction.

Everything here is deterministic. Background load on a shared resource is
drawn from a counter-based generator keyed by (seed, resource, job), so a
given run replays identically on any platform; seed 0 disables load.
"""

from __future__ import annotations

import heapq
import importlib.resources
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Optional

from .config import BrokerConfig, half_up
from .model import BrokerError
from .rng import draw_range
from .trading import PricePolicy, PriceModel


class EmptyQueue(BrokerError):
    pass


class PastInstant(BrokerError):
    pass


class ConfigError(BrokerError):
    pass


class EventKind(str, Enum):
    AGENT_START = "agent_start"
    AGENT_DONE = "agent_done"
    QUANTUM_TICK = "quantum_tick"
    RESOURCE_DOWN = "resource_down"
    RESOURCE_UP = "resource_up"
    CLIENT_COMMAND = "client_command"


@dataclass(frozen=True)
class SimEvent:
    instant: int
    ordinal: int
    kind: EventKind
    payload: Mapping[str, Any]


@dataclass(frozen=True)
class AvailabilityWindow:
    from_s: int
    until_s: int
    fraction: float

    def __post_init__(self) -> None:
        if not (0 <= self.fraction <= 1):
            raise ValueError("availability fraction must be in [0, 1]")
        if self.from_s >= self.until_s:
            raise ValueError("availability window is empty")


@dataclass(frozen=True)
class FailureSpec:
    at: int
    duration: int
    scope: str = "all"


@dataclass
class Resource:
    id: str
    organization: str
    node_count: int
    speed_factor: float
    policy: PricePolicy
    availability: tuple[AvailabilityWindow, ...] = ()
    failures: tuple[FailureSpec, ...] = ()
    up: bool = True  # runtime flag, flipped by down/up events

    def __post_init__(self) -> None:
        if self.node_count <= 0:
            raise ValueError("node_count must be positive")
        if self.speed_factor <= 0:
            raise ValueError("speed_factor must be positive")

    def available_nodes(self, now: int) -> int:
        """Nodes usable at this instant: zero when down, otherwise the node
        count scaled by any active availability window (shared machines are
        not fully ours)."""
        if not self.up:
            return 0
        for w in self.availability:
            if w.from_s <= now < w.until_s:
                return int(w.fraction * self.node_count)
        return self.node_count

    def as_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "organization": self.organization,
            "nodes": self.node_count,
            "speed": self.speed_factor,
            "price": self.policy.as_dict(),
        }
        if self.availability:
            d["availability"] = [[w.from_s, w.until_s, w.fraction]
                                 for w in self.availability]
        if self.failures:
            d["failures"] = [[f.at, f.duration, f.scope] for f in self.failures]
        return d


class Simulation:
    """Single-threaded discrete-event loop. Events run in (instant, ordinal)
    order; ordinals follow insertion order, so same-instant events are FIFO."""

    def __init__(self, start: int = 0):
        self.clock = start
        self._heap: list[tuple[int, int, SimEvent]] = []
        self._ordinal = 0
        self._cancelled: set[int] = set()
        self.handlers: dict[EventKind, Callable[[SimEvent], None]] = {}

    def schedule(self, at: int, kind: EventKind,
                 payload: Optional[Mapping[str, Any]] = None) -> SimEvent:
        if at < self.clock:
            raise PastInstant(f"cannot schedule at {at}, clock is {self.clock}")
        ev = SimEvent(at, self._ordinal, kind, payload or {})
        self._ordinal += 1
        heapq.heappush(self._heap, (ev.instant, ev.ordinal, ev))
        return ev

    def cancel(self, event: SimEvent) -> None:
        self._cancelled.add(event.ordinal)

    def pending(self) -> bool:
        while self._heap and self._heap[0][2].ordinal in self._cancelled:
            self._cancelled.discard(heapq.heappop(self._heap)[1])
        return bool(self._heap)

    def peek_time(self) -> int:
        if not self.pending():
            raise EmptyQueue("no pending events")
        return self._heap[0][0]

    def advance(self) -> SimEvent:
        while self._heap:
            _, _, ev = heapq.heappop(self._heap)
            if ev.ordinal in self._cancelled:
                self._cancelled.discard(ev.ordinal)
                continue
            self.clock = ev.instant
            handler = self.handlers.get(ev.kind)
            if handler is not None:
                handler(ev)
            return ev
        raise EmptyQueue("no pending events")


class GridFabric:
    """The simulated testbed: resources plus node occupancy, tied to one
    Simulation and one load seed."""

    def __init__(self, resources: Iterable[Resource], sim: Simulation,
                 seed: int, config: Optional[BrokerConfig] = None):
        self.sim = sim
        self.seed = seed
        self.config = config or BrokerConfig()
        self.resources: dict[str, Resource] = {}
        for r in resources:
            if r.id in self.resources:
                raise ConfigError(f"duplicate resource id {r.id!r}")
            self.resources[r.id] = r
        if not self.resources:
            raise ConfigError("testbed has no resources")
        # node index -> job id, per resource
        self.occupancy: dict[str, dict[int, str]] = {r: {} for r in self.resources}
        for r in self.resources.values():
            for f in r.failures:
                if f.at >= sim.clock:
                    self.inject_failure(r.id, f.at, f.duration, f.scope)
                elif f.at + f.duration > sim.clock:
                    # resuming inside an outage window: already down, only
                    # the recovery edge remains
                    r.up = False
                    sim.schedule(f.at + f.duration, EventKind.RESOURCE_UP,
                                 {"resource": r.id})

    def resource(self, rid: str) -> Resource:
        try:
            return self.resources[rid]
        except KeyError:
            raise ConfigError(f"unknown resource {rid!r}") from None

    def up_resources(self) -> list[Resource]:
        return [r for r in self.resources.values() if r.up]

    def free_nodes(self, rid: str, now: int) -> list[int]:
        r = self.resource(rid)
        usable = r.available_nodes(now)
        busy = self.occupancy[rid]
        return [n for n in range(usable) if n not in busy]

    def occupy(self, rid: str, node: int, job_id: str) -> None:
        busy = self.occupancy[rid]
        if node in busy:
            raise BrokerError(f"node {rid}[{node}] already occupied by {busy[node]}")
        busy[node] = job_id

    def release(self, rid: str, node: int) -> None:
        self.occupancy[rid].pop(node, None)

    def occupants(self, rid: str) -> dict[int, str]:
        return dict(self.occupancy[rid])

    def background_load(self, rid: str, job_id: str) -> float:
        if self.seed == 0:
            return 0.0
        return draw_range(self.seed, self.config.load_min, self.config.load_max,
                          "load", rid, job_id)

    def cpu_seconds(self, nominal: int, rid: str) -> int:
        return half_up(nominal / self.resource(rid).speed_factor)

    def service_time(self, nominal: int, job_id: str, rid: str) -> int:
        """Wall seconds the job holds its node, staging excluded: the nominal
        demand scaled by node speed, stretched by background load."""
        r = self.resource(rid)
        load = self.background_load(rid, job_id)
        return half_up(nominal / r.speed_factor * (1.0 + load))

    def inject_failure(self, rid: str, at: int, duration: int,
                       scope: str = "all") -> tuple[SimEvent, SimEvent]:
        if at < self.sim.clock:
            raise PastInstant(f"failure at {at} is in the past")
        if duration <= 0:
            raise ValueError("failure duration must be positive")
        if scope != "all":
            raise ConfigError(f"unsupported failure scope {scope!r}")
        self.resource(rid)
        down = self.sim.schedule(at, EventKind.RESOURCE_DOWN, {"resource": rid})
        up = self.sim.schedule(at + duration, EventKind.RESOURCE_UP, {"resource": rid})
        return down, up


def _parse_resource(d: Mapping[str, Any]) -> Resource:
    try:
        availability = tuple(
            AvailabilityWindow(int(a[0]), int(a[1]), float(a[2]))
            for a in d.get("availability", ())
        )
        failures = tuple(
            FailureSpec(int(f[0]), int(f[1]), str(f[2]) if len(f) > 2 else "all")
            for f in d.get("failures", ())
        )
        return Resource(
            id=str(d["id"]),
            organization=str(d.get("organization", "")),
            node_count=int(d["nodes"]),
            speed_factor=float(d.get("speed", 1.0)),
            policy=PricePolicy.from_dict(d["price"]),
            availability=availability,
            failures=failures,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"bad resource entry {d!r}: {exc}") from exc


def resources_from_doc(doc: Mapping[str, Any]) -> list[Resource]:
    if not isinstance(doc, Mapping) or "resources" not in doc:
        raise ConfigError('testbed must be an object with a "resources" list')
    entries = doc["resources"]
    if not isinstance(entries, list) or not entries:
        raise ConfigError("testbed declares no resources")
    return [_parse_resource(e) for e in entries]


def load_testbed(text: str) -> list[Resource]:
    """Parse a testbed document (JSON: {"resources": [...]}) into resources
    in declaration order."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"testbed is not valid JSON: {exc}") from exc
    return resources_from_doc(doc)


def testbed_to_doc(resources: Iterable[Resource]) -> dict[str, Any]:
    return {"resources": [r.as_dict() for r in resources]}


def default_testbed_text() -> str:
    return (importlib.resources.files("gridbroker.data") / "wwg.testbed").read_text()


def build_wwg(config_text: Optional[str] = None) -> list[Resource]:
    """The shipped world-wide testbed used by the headline scenario; pass
    alternative document text to override."""
    return load_testbed(config_text if config_text is not None
                        else default_testbed_text())
