"""Domain types shared by every broker component.

The job lifecycle is a strict state machine::

    Ready --Assign--> Scheduled --Stage--> Staged --Start--> Executing
    Executing --Complete--> Done          (terminal)
    Executing --Fail--> Failed --Requeue--> Ready
    any non-terminal --Cancel--> Cancelled (terminal)

plus one engine-only event, ``Recover``, that returns an in-flight job
(Scheduled/Staged/Executing) to Ready after a crash, a resource failure
under a staged deployment, or an experiment stop. Normal completion paths
never use it.

Jobs are immutable values; ``transition_job`` returns a new job and the
single-writer farming engine owns the authoritative copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Optional


class BrokerError(Exception):
    """Base class for broker domain errors."""


class IllegalTransition(BrokerError):
    """A (state, event) pairing outside the transition table; broker bug."""


class ExperimentTerminal(BrokerError):
    """Operation on an experiment already in a terminal phase."""


class JobState(str, Enum):
    READY = "ready"
    SCHEDULED = "scheduled"
    STAGED = "staged"
    EXECUTING = "executing"
    DONE = "done"
    FAILED = "failed"
    CANCELLED = "cancelled"


TERMINAL_JOB_STATES = frozenset({JobState.DONE, JobState.CANCELLED})
IN_FLIGHT_STATES = frozenset({JobState.SCHEDULED, JobState.STAGED, JobState.EXECUTING})
# A job at rest: nothing will happen to it without external intervention.
# Failed is settled because the engine requeues retryable failures in the
# same event that records them; Failed at rest means retries are exhausted.
SETTLED_JOB_STATES = frozenset({JobState.DONE, JobState.FAILED, JobState.CANCELLED})


class ExperimentPhase(str, Enum):
    CREATED = "created"
    CALIBRATING = "calibrating"
    RUNNING = "running"
    PAUSED = "paused"
    COMPLETED = "completed"
    FAILED_DEADLINE = "failed_deadline"
    FAILED_BUDGET = "failed_budget"
    STOPPED = "stopped"


TERMINAL_PHASES = frozenset(
    {
        ExperimentPhase.COMPLETED,
        ExperimentPhase.FAILED_DEADLINE,
        ExperimentPhase.FAILED_BUDGET,
        ExperimentPhase.STOPPED,
    }
)


class Strategy(str, Enum):
    TIME = "time"
    COST = "cost"


class AttemptOutcome(str, Enum):
    SUCCESS = "success"
    RESOURCE_FAILURE = "resource_failure"
    TASK_ERROR = "task_error"
    PREEMPTED = "preempted"


@dataclass(frozen=True)
class QoSConstraints:
    """User QoS contract: a deadline in minutes from experiment start, a G$
    budget, the optimization strategy, and per-constraint enforcement flags.
    An unenforced constraint is treated as unbounded by every consumer."""

    deadline_min: float
    budget: int
    strategy: Strategy
    enforce_deadline: bool = True
    enforce_budget: bool = True

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.deadline_min <= 0:
            raise ValueError("deadline must be > 0")

    @property
    def deadline_s(self) -> int:
        return int(round(self.deadline_min * 60))

    def as_dict(self) -> dict[str, Any]:
        return {
            "deadline_min": self.deadline_min,
            "budget": self.budget,
            "strategy": self.strategy.value,
            "enforce_deadline": self.enforce_deadline,
            "enforce_budget": self.enforce_budget,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "QoSConstraints":
        return cls(
            deadline_min=d["deadline_min"],
            budget=d["budget"],
            strategy=Strategy(d["strategy"]),
            enforce_deadline=d.get("enforce_deadline", True),
            enforce_budget=d.get("enforce_budget", True),
        )


@dataclass(frozen=True)
class AttemptRecord:
    """One execution attempt. Open while end is None; closing fills in the
    consumption the agent measured."""

    resource: str
    node: int
    start: int
    end: Optional[int] = None
    cpu_seconds: int = 0
    wall_seconds: int = 0
    outcome: Optional[AttemptOutcome] = None

    @property
    def open(self) -> bool:
        return self.end is None

    def close(self, end: int, cpu_seconds: int, wall_seconds: int,
              outcome: AttemptOutcome) -> "AttemptRecord":
        if not self.open:
            raise IllegalTransition(f"attempt on {self.resource} already closed")
        if cpu_seconds < 0 or wall_seconds < 0 or cpu_seconds > wall_seconds:
            raise ValueError("need 0 <= cpu_seconds <= wall_seconds")
        return replace(self, end=end, cpu_seconds=cpu_seconds,
                       wall_seconds=wall_seconds, outcome=outcome)

    def as_dict(self) -> dict[str, Any]:
        return {
            "resource": self.resource,
            "node": self.node,
            "start": self.start,
            "end": self.end,
            "cpu_seconds": self.cpu_seconds,
            "wall_seconds": self.wall_seconds,
            "outcome": self.outcome.value if self.outcome else None,
        }


@dataclass(frozen=True)
class Job:
    id: str
    binding: Mapping[str, Any]
    command: str
    nominal_cpu_seconds: Optional[int] = None
    state: JobState = JobState.READY
    assigned_resource: Optional[str] = None
    attempts: tuple[AttemptRecord, ...] = ()

    @property
    def open_attempt(self) -> Optional[AttemptRecord]:
        if self.attempts and self.attempts[-1].open:
            return self.attempts[-1]
        return None

    def task_error_count(self) -> int:
        return sum(1 for a in self.attempts if a.outcome is AttemptOutcome.TASK_ERROR)


# --- job events -------------------------------------------------------------

@dataclass(frozen=True)
class Assign:
    resource: str


@dataclass(frozen=True)
class Stage:
    pass


@dataclass(frozen=True)
class Start:
    node: int
    at: int


@dataclass(frozen=True)
class Complete:
    at: int
    cpu_seconds: Optional[int] = None
    wall_seconds: Optional[int] = None


@dataclass(frozen=True)
class Fail:
    at: int
    outcome: AttemptOutcome = AttemptOutcome.TASK_ERROR
    cpu_seconds: Optional[int] = None
    wall_seconds: Optional[int] = None


@dataclass(frozen=True)
class Requeue:
    pass


@dataclass(frozen=True)
class Cancel:
    at: int = 0


@dataclass(frozen=True)
class Recover:
    at: int = 0


JobEvent = Any  # union of the event dataclasses above


def transition_job(job: Job, event: JobEvent) -> Job:
    """Apply one lifecycle event; raises IllegalTransition on any pairing
    outside the table. Attempt history is append-only and a closing event
    whose attempt was already closed (by a separate accounting record)
    performs the state flip alone."""

    st = job.state

    if isinstance(event, Assign):
        if st is not JobState.READY:
            raise IllegalTransition(f"{job.id}: Assign in state {st.value}")
        return replace(job, state=JobState.SCHEDULED, assigned_resource=event.resource)

    if isinstance(event, Stage):
        if st is not JobState.SCHEDULED:
            raise IllegalTransition(f"{job.id}: Stage in state {st.value}")
        return replace(job, state=JobState.STAGED)

    if isinstance(event, Start):
        if st is not JobState.STAGED:
            raise IllegalTransition(f"{job.id}: Start in state {st.value}")
        attempt = AttemptRecord(resource=job.assigned_resource or "",
                                node=event.node, start=event.at)
        return replace(job, state=JobState.EXECUTING,
                       attempts=job.attempts + (attempt,))

    if isinstance(event, Complete):
        if st is not JobState.EXECUTING:
            raise IllegalTransition(f"{job.id}: Complete in state {st.value}")
        attempts = job.attempts
        open_att = job.open_attempt
        if open_att is not None:
            closed = open_att.close(event.at, event.cpu_seconds or 0,
                                    event.wall_seconds or 0, AttemptOutcome.SUCCESS)
            attempts = attempts[:-1] + (closed,)
        elif not attempts or attempts[-1].outcome is not AttemptOutcome.SUCCESS:
            raise IllegalTransition(f"{job.id}: Complete without successful attempt")
        return replace(job, state=JobState.DONE, assigned_resource=None,
                       attempts=attempts)

    if isinstance(event, Fail):
        if st is not JobState.EXECUTING:
            raise IllegalTransition(f"{job.id}: Fail in state {st.value}")
        attempts = job.attempts
        open_att = job.open_attempt
        if open_att is not None:
            closed = open_att.close(event.at, event.cpu_seconds or 0,
                                    event.wall_seconds or 0, event.outcome)
            attempts = attempts[:-1] + (closed,)
        return replace(job, state=JobState.FAILED, assigned_resource=None,
                       attempts=attempts)

    if isinstance(event, Requeue):
        if st is not JobState.FAILED:
            raise IllegalTransition(f"{job.id}: Requeue in state {st.value}")
        return replace(job, state=JobState.READY)

    if isinstance(event, Cancel):
        if st in TERMINAL_JOB_STATES:
            raise IllegalTransition(f"{job.id}: Cancel in state {st.value}")
        attempts = job.attempts
        open_att = job.open_attempt
        if open_att is not None:
            closed = open_att.close(event.at, 0, max(0, event.at - open_att.start),
                                    AttemptOutcome.PREEMPTED)
            attempts = attempts[:-1] + (closed,)
        return replace(job, state=JobState.CANCELLED, assigned_resource=None,
                       attempts=attempts)

    if isinstance(event, Recover):
        if st not in IN_FLIGHT_STATES:
            raise IllegalTransition(f"{job.id}: Recover in state {st.value}")
        attempts = job.attempts
        open_att = job.open_attempt
        if open_att is not None:
            closed = open_att.close(event.at, 0, max(0, event.at - open_att.start),
                                    AttemptOutcome.PREEMPTED)
            attempts = attempts[:-1] + (closed,)
        return replace(job, state=JobState.READY, assigned_resource=None,
                       attempts=attempts)

    raise IllegalTransition(f"{job.id}: unknown event {event!r}")


@dataclass
class ResourceLedger:
    jobs_done: int = 0
    cpu_seconds: int = 0
    cost: int = 0

    def as_dict(self) -> dict[str, int]:
        return {"jobs_done": self.jobs_done, "cpu_seconds": self.cpu_seconds,
                "cost": self.cost}


@dataclass
class Accounts:
    """Application-level accounting. ``spent`` is the exact integer sum of
    closed-attempt charges; ``committed`` is authorized-but-unreported."""

    spent: int = 0
    committed: int = 0
    ledgers: dict[str, ResourceLedger] = field(default_factory=dict)

    def ledger(self, resource: str) -> ResourceLedger:
        return self.ledgers.setdefault(resource, ResourceLedger())

    def as_dict(self) -> dict[str, Any]:
        return {
            "spent": self.spent,
            "committed": self.committed,
            "ledgers": {r: l.as_dict() for r, l in sorted(self.ledgers.items())},
        }


@dataclass
class Experiment:
    """Mutable experiment container; the farming engine is its single writer."""

    id: str
    jobs: dict[str, Job]
    qos: QoSConstraints
    accounts: Accounts
    phase: ExperimentPhase = ExperimentPhase.CREATED
    clock_origin: int = 0
    reschedule_requested: bool = False

    def unfinished(self) -> list[Job]:
        return [j for j in self.jobs.values() if j.state not in TERMINAL_JOB_STATES]

    def in_state(self, state: JobState) -> list[Job]:
        return [j for j in self.jobs.values() if j.state is state]

    def all_settled(self) -> bool:
        return all(j.state in SETTLED_JOB_STATES for j in self.jobs.values())

    def any_done(self) -> bool:
        return any(j.state is JobState.DONE for j in self.jobs.values())


def effective_qos(experiment: Experiment, new: QoSConstraints) -> QoSConstraints:
    """Validate a steering change and return what would actually apply,
    without mutating anything.

    Raises ExperimentTerminal outside {Created, Calibrating, Running,
    Paused}. An incoming budget below the funds already spent or committed
    is clamped up to that floor: committed money belongs to contracts the
    broker may not revoke, so a lower figure would falsify the accounts.
    """
    if experiment.phase in TERMINAL_PHASES:
        raise ExperimentTerminal(
            f"experiment {experiment.id} is {experiment.phase.value}")
    if new.enforce_budget:
        floor = experiment.accounts.spent + experiment.accounts.committed
        if new.budget < floor:
            return replace(new, budget=floor)
    return new


def qos_update(experiment: Experiment, new: QoSConstraints) -> QoSConstraints:
    """Apply a steering change; returns the effective QoS. The reschedule
    flag is set even when the new QoS equals the old one."""
    effective = effective_qos(experiment, new)
    experiment.qos = effective
    experiment.reschedule_requested = True
    return effective
