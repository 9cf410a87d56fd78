"""Schedule advisor: discovery, calibration, load profiling, and the two
constrained allocation strategies.

Both strategies plan over interchangeable jobs using one measured figure
per resource (smoothed wall-seconds per job per node, staging included).
Cost optimization fills the cheapest efficient resources up to what they
can finish by the deadline. Time optimization scans achievable makespans
in ascending order and takes the earliest one whose cheapest fill still
fits the remaining budget; a plain earliest-completion greedy can strand
budget on fast-but-costly machines and miss feasible schedules, so the
scan is deliberate.

Planning is pure: inputs are snapshots, the output is an Allocation (or an
Infeasibility value). The engine owns all mutation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence, Union

from .config import BrokerConfig, half_up
from .fabric import Resource
from .model import AttemptOutcome, AttemptRecord, BrokerError, QoSConstraints
from .trading import PriceQuote, quote


class NoResources(BrokerError):
    """Nothing available to run on; the engine treats this as transient."""


class InfeasibilityKind(str, Enum):
    DEADLINE = "deadline"
    BUDGET = "budget"


@dataclass(frozen=True)
class Infeasibility:
    kind: InfeasibilityKind
    detail: str


@dataclass(frozen=True)
class RateProfile:
    measured: Optional[float] = None
    samples: int = 0
    last_updated: int = 0


@dataclass(frozen=True)
class Allocation:
    """Per-resource ordered job queues plus the plan's own estimates."""

    queues: Mapping[str, tuple[str, ...]]
    estimated_completion: int
    estimated_cost: int

    def counts(self) -> dict[str, int]:
        return {r: len(q) for r, q in self.queues.items()}

    def assignments(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for r, q in self.queues.items():
            for job_id in q:
                if job_id in out:
                    raise ValueError(f"job {job_id} allocated twice")
                out[job_id] = r
        return out

    def total(self) -> int:
        return sum(len(q) for q in self.queues.values())


Quoted = Sequence[tuple[Resource, PriceQuote]]
ScheduleResult = Union[Allocation, Infeasibility]


def discover_resources(fabric, consumer: str, now: int,
                       *, ttl: int = 300) -> list[tuple[Resource, PriceQuote]]:
    """All currently-up resources paired with fresh quotes, in registry
    order. Raises NoResources when the grid is empty or fully down."""
    pairs = [(r, quote(r, consumer, now, ttl=ttl)) for r in fabric.up_resources()]
    if not pairs:
        raise NoResources("no resource is currently available")
    return pairs


def update_rate(profile: RateProfile, report: AttemptRecord,
                *, alpha: float = 0.3, now: int = 0) -> RateProfile:
    """Fold one successful attempt into the smoothed per-job wall time.
    Failed attempts leave the profile untouched."""
    if report.outcome is not AttemptOutcome.SUCCESS:
        return profile
    observed = float(report.wall_seconds)
    if profile.measured is None:
        return RateProfile(measured=observed, samples=1, last_updated=now)
    return RateProfile(
        measured=alpha * observed + (1.0 - alpha) * profile.measured,
        samples=profile.samples + 1,
        last_updated=now,
    )


def estimate_seconds(profile: Optional[RateProfile], config: BrokerConfig) -> int:
    if profile is not None and profile.measured is not None:
        return max(1, half_up(profile.measured))
    return config.default_estimate_s


def capacity_by_deadline(resource: Resource, profile: Optional[RateProfile],
                         now: int, deadline: int, *, nodes: Optional[int] = None,
                         allotment: int = 1, busy: int = 0) -> int:
    """Whole jobs this resource can finish before the deadline. An
    unmeasured resource is worth exactly its calibration allotment.

    ``busy`` nodes are mid-job; each one consumes a slot of the first
    wave, so capacity shrinks by the in-flight count. Slightly
    conservative (a running job is partway done), never optimistic."""
    window = deadline - now
    if window <= 0:
        return 0
    if profile is None or profile.measured is None:
        return max(0, allotment - busy)
    n = resource.available_nodes(now) if nodes is None else nodes
    return max(0, int(math.floor(window / profile.measured + 1e-9)) * n - busy)


def calibrate(quoted: Quoted, job_ids: Sequence[str], now: int,
              *, config: Optional[BrokerConfig] = None) -> Allocation:
    """One measurement pass: min(nodes, calibration allotment) jobs to every
    discovered resource, cheapest resources served first when jobs run
    short."""
    cfg = config or BrokerConfig()
    if not quoted:
        raise NoResources("cannot calibrate an empty grid")
    order = sorted(quoted, key=lambda rq: (rq[1].price, rq[0].id))
    queues: dict[str, tuple[str, ...]] = {}
    cost = 0
    remaining = list(job_ids)
    for resource, price_quote in order:
        take = min(cfg.calibration_jobs_per_resource, resource.node_count,
                   len(remaining))
        if take == 0:
            continue
        queues[resource.id] = tuple(remaining[:take])
        remaining = remaining[take:]
        cost += take * price_quote.price * cfg.default_estimate_s
    return Allocation(queues=queues, estimated_completion=now + cfg.default_estimate_s,
                      estimated_cost=cost)


def _fill_order(quoted: Quoted, profiles: Mapping[str, RateProfile],
                caps: Mapping[str, int], config: BrokerConfig) -> list[tuple[Resource, PriceQuote]]:
    # cheapest per-job first; then cheaper per-second, bigger, stable id
    def key(rq: tuple[Resource, PriceQuote]):
        r, q = rq
        per_job = q.price * estimate_seconds(profiles.get(r.id), config)
        return (per_job, q.price, -caps[r.id], r.id)

    return sorted(quoted, key=key)


def _greedy_fill(n: int, quoted: Quoted, profiles: Mapping[str, RateProfile],
                 caps: Mapping[str, int],
                 config: BrokerConfig) -> Optional[tuple[dict[str, int], int]]:
    """Place n interchangeable jobs into per-resource capacity buckets at
    minimum estimated cost; None when capacity falls short."""
    counts: dict[str, int] = {}
    cost = 0
    left = n
    for resource, price_quote in _fill_order(quoted, profiles, caps, config):
        if left == 0:
            break
        take = min(caps[resource.id], left)
        if take <= 0:
            continue
        counts[resource.id] = take
        cost += take * price_quote.price * estimate_seconds(
            profiles.get(resource.id), config)
        left -= take
    if left > 0:
        return None
    return counts, cost


def _makespan(counts: Mapping[str, int], quoted: Quoted,
              profiles: Mapping[str, RateProfile], now: int,
              config: BrokerConfig,
              busy: Optional[Mapping[str, int]] = None) -> int:
    worst = 0
    by_id = {r.id: r for r, _ in quoted}
    for rid, c in counts.items():
        if c == 0:
            continue
        nodes = max(1, by_id[rid].available_nodes(now))
        occupied = (busy or {}).get(rid, 0)
        waves = math.ceil((c + occupied) / nodes)
        worst = max(worst, waves * estimate_seconds(profiles.get(rid), config))
    return worst


def _build_queues(job_ids: Sequence[str], counts: Mapping[str, int],
                  order: Sequence[str]) -> dict[str, tuple[str, ...]]:
    queues: dict[str, tuple[str, ...]] = {}
    cursor = 0
    for rid in order:
        c = counts.get(rid, 0)
        if c:
            queues[rid] = tuple(job_ids[cursor:cursor + c])
            cursor += c
    return queues


def schedule_cost_opt(job_ids: Sequence[str], quoted: Quoted,
                      profiles: Mapping[str, RateProfile], qos: QoSConstraints,
                      spent: int, now: int, *, origin: int = 0,
                      busy: Optional[Mapping[str, int]] = None,
                      config: Optional[BrokerConfig] = None) -> ScheduleResult:
    """Cheapest deadline-feasible fill. ``spent`` must include committed
    funds so the budget test covers money already promised."""
    cfg = config or BrokerConfig()
    n = len(job_ids)
    if n == 0:
        return Allocation(queues={}, estimated_completion=now, estimated_cost=0)
    if not quoted:
        raise NoResources("no quoted resources")

    occupied = busy or {}
    deadline = origin + qos.deadline_s if qos.enforce_deadline else None
    caps = {
        r.id: (n if deadline is None else capacity_by_deadline(
            r, profiles.get(r.id), now, deadline,
            allotment=cfg.calibration_jobs_per_resource,
            busy=occupied.get(r.id, 0)))
        for r, _ in quoted
    }
    filled = _greedy_fill(n, quoted, profiles, caps, cfg)
    if filled is None:
        return Infeasibility(
            InfeasibilityKind.DEADLINE,
            f"capacity {sum(caps.values())} of {n} jobs by deadline")
    counts, cost = filled
    if qos.enforce_budget and spent + cost > qos.budget:
        return Infeasibility(
            InfeasibilityKind.BUDGET,
            f"cheapest fill needs {cost} G$ with {qos.budget - spent} left")
    order = [r.id for r, _ in _fill_order(quoted, profiles, caps, cfg)]
    return Allocation(
        queues=_build_queues(job_ids, counts, order),
        estimated_completion=now + _makespan(counts, quoted, profiles, now,
                                             cfg, occupied),
        estimated_cost=cost,
    )


def schedule_time_opt(job_ids: Sequence[str], quoted: Quoted,
                      profiles: Mapping[str, RateProfile], qos: QoSConstraints,
                      spent: int, now: int, *, origin: int = 0,
                      busy: Optional[Mapping[str, int]] = None,
                      config: Optional[BrokerConfig] = None) -> ScheduleResult:
    """Earliest affordable makespan. Candidate makespans are whole waves
    k × rate on each resource; for each candidate in ascending order the
    cheapest fill within its capacities is tested against the budget."""
    cfg = config or BrokerConfig()
    n = len(job_ids)
    if n == 0:
        return Allocation(queues={}, estimated_completion=now, estimated_cost=0)
    if not quoted:
        raise NoResources("no quoted resources")

    occupied = busy or {}
    deadline = origin + qos.deadline_s if qos.enforce_deadline else None
    window = None if deadline is None else deadline - now
    if window is not None and window <= 0:
        return Infeasibility(InfeasibilityKind.DEADLINE, "deadline already passed")

    candidates: set[int] = set()
    for r, _ in quoted:
        est = estimate_seconds(profiles.get(r.id), cfg)
        nodes = max(1, r.available_nodes(now))
        # busy nodes still need their wave to drain, so horizons must
        # cover up to ceil((n + busy) / nodes) waves
        for waves in range(1, math.ceil((n + occupied.get(r.id, 0)) / nodes) + 1):
            t = waves * est
            if window is None or t <= window:
                candidates.add(t)

    had_capacity = False
    for horizon in sorted(candidates):
        caps = {
            r.id: capacity_by_deadline(r, profiles.get(r.id), now, now + horizon,
                                       allotment=cfg.calibration_jobs_per_resource,
                                       busy=occupied.get(r.id, 0))
            for r, _ in quoted
        }
        filled = _greedy_fill(n, quoted, profiles, caps, cfg)
        if filled is None:
            continue
        had_capacity = True
        counts, cost = filled
        if qos.enforce_budget and spent + cost > qos.budget:
            continue
        order = [r.id for r, _ in _fill_order(quoted, profiles, caps, cfg)]
        return Allocation(
            queues=_build_queues(job_ids, counts, order),
            estimated_completion=now + _makespan(counts, quoted, profiles, now,
                                                 cfg, occupied),
            estimated_cost=cost,
        )
    if had_capacity:
        return Infeasibility(InfeasibilityKind.BUDGET,
                             "no fast-enough fill fits the remaining budget")
    return Infeasibility(InfeasibilityKind.DEADLINE,
                         "no achievable makespan fits inside the deadline")


def plan(strategy, job_ids: Sequence[str], quoted: Quoted,
         profiles: Mapping[str, RateProfile], qos: QoSConstraints, spent: int,
         now: int, *, origin: int = 0,
         busy: Optional[Mapping[str, int]] = None,
         config: Optional[BrokerConfig] = None) -> ScheduleResult:
    from .model import Strategy

    fn = schedule_cost_opt if strategy is Strategy.COST else schedule_time_opt
    return fn(job_ids, quoted, profiles, qos, spent, now, origin=origin,
              busy=busy, config=config)


def diff_assignments(old: Mapping[str, str],
                     new: Mapping[str, str]) -> list[tuple[str, Optional[str], str]]:
    """Jobs whose resource changed under a replan: (job, from, to). Jobs
    keeping their resource are untouched, which keeps replans cheap."""
    moved = []
    for job_id in sorted(new):
        before = old.get(job_id)
        if before != new[job_id]:
            moved.append((job_id, before, new[job_id]))
    return moved
