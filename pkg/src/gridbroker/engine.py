"""The task-farming engine: single writer over experiment state.

Every mutation follows the same discipline: build a journal record,
append it durably, then fold it into memory via ``EngineState.apply``.
Recovery is the same fold over the file, so the engine cannot disagree
with its own journal. Scheduling, dispatch and agent simulation hang off
the fabric's event loop; this module wires the handlers.

Timeline of one dispatched job::

    tick t: Assign (planner) .. Stage (node occupied, funds committed)
    t + stage_delay:           Start (attempt opens, agent executing)
    t + stage_delay + service: AttemptClosed + Complete/Fail (+Requeue)
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .config import BrokerConfig, half_up
from .dispatch import DispatchAction, Disposition, detect_error, plan_dispatch
from .fabric import (EventKind, GridFabric, Resource, SimEvent, Simulation,
                     load_testbed, resources_from_doc, testbed_to_doc)
from .journal import (KIND_ATTEMPT_CLOSED, KIND_EXPERIMENT_CREATED,
                      KIND_JOB_TRANSITION, KIND_PHASE_CHANGED,
                      KIND_QOS_CHANGED, KIND_QUANTUM_MARK, CorruptJournal,
                      JournalRecord, JournalWriter, StorageFailure,
                      read_journal, verify_integrity)
from .model import (Accounts, Assign, AttemptOutcome, BrokerError, Cancel,
                    Complete, Experiment, ExperimentPhase, ExperimentTerminal,
                    Fail, IN_FLIGHT_STATES, Job, JobState, QoSConstraints,
                    Recover, Requeue, Stage, Start, Strategy,
                    TERMINAL_JOB_STATES, TERMINAL_PHASES, effective_qos,
                    transition_job)
from .plan import JobSpec
from .rng import chance, draw_range
from .scheduler import (Infeasibility, InfeasibilityKind, NoResources,
                        RateProfile, calibrate, diff_assignments,
                        discover_resources, estimate_seconds,
                        plan as plan_allocation, update_rate)
from .trading import Contract, TradeRequest, negotiate


class InvalidPhase(BrokerError):
    """Command not permitted in the experiment's current phase."""


class JobExecuting(BrokerError):
    pass


class UnknownJob(BrokerError):
    pass


class UnknownAttempt(BrokerError):
    pass


class LengthMismatch(BrokerError):
    pass


def allocation_cost(counts: Sequence[int], prices: Sequence[int],
                    cpu_seconds_per_job: int) -> int:
    """Total G$ for a per-resource job-count vector at per-resource prices,
    integer-exact."""
    if len(counts) != len(prices):
        raise LengthMismatch(f"{len(counts)} counts vs {len(prices)} prices")
    if any(c < 0 for c in counts) or any(p < 0 for p in prices):
        raise ValueError("counts and prices must be non-negative")
    if cpu_seconds_per_job < 0:
        raise ValueError("cpu_seconds_per_job must be non-negative")
    return sum(c * p * cpu_seconds_per_job for c, p in zip(counts, prices))


@dataclass
class Commitment:
    resource: str
    node: int
    price: int
    authorized: int


@dataclass
class LiveAgent:
    """Runtime token for one dispatched job; dies with the process, which is
    exactly why recovery demotes anything still holding one."""

    job_id: str
    resource: str
    node: int
    price: int
    authorized: int
    dispatched_at: int
    exec_start: int
    service: int
    cpu_total: int
    attempt_no: int
    start_event: SimEvent
    done_event: SimEvent


_FAIL_PHASE = {
    InfeasibilityKind.DEADLINE: ExperimentPhase.FAILED_DEADLINE,
    InfeasibilityKind.BUDGET: ExperimentPhase.FAILED_BUDGET,
}


class EngineState:
    """The foldable core: everything a journal replay can reconstruct."""

    def __init__(self) -> None:
        self.experiment: Optional[Experiment] = None
        self.profiles: dict[str, RateProfile] = {}
        self.queues: dict[str, list[str]] = {}
        self.commitments: dict[str, Commitment] = {}
        self.config = BrokerConfig()
        self.seed = 0
        self.consumer = "default"
        self.testbed_doc: dict[str, Any] = {}
        self.origin = 0
        self.t = 0
        self.last_mark: Optional[Mapping[str, Any]] = None
        self.last_infeasible: Optional[str] = None
        self.terminal_t: Optional[int] = None
        self.paused_from = ExperimentPhase.RUNNING

    @property
    def exp(self) -> Experiment:
        assert self.experiment is not None, "no ExperimentCreated record applied"
        return self.experiment

    def apply(self, record: JournalRecord) -> None:
        self.t = record.t
        p = record.payload
        if record.kind == KIND_EXPERIMENT_CREATED:
            self._apply_created(record.t, p)
        elif record.kind == KIND_QOS_CHANGED:
            exp = self.exp
            exp.qos = QoSConstraints.from_dict(p["effective"])
            exp.reschedule_requested = True
        elif record.kind == KIND_JOB_TRANSITION:
            self._apply_transition(p)
        elif record.kind == KIND_ATTEMPT_CLOSED:
            self._apply_attempt_closed(record.t, p)
        elif record.kind == KIND_QUANTUM_MARK:
            self.last_mark = p
            self.last_infeasible = p.get("infeasible")
            if p.get("replanned"):
                self.exp.reschedule_requested = False
        elif record.kind == KIND_PHASE_CHANGED:
            phase = ExperimentPhase(p["phase"])
            if phase is ExperimentPhase.PAUSED and p.get("previous"):
                self.paused_from = ExperimentPhase(p["previous"])
            self.exp.phase = phase
            if phase in TERMINAL_PHASES:
                self.terminal_t = record.t
        else:
            raise BrokerError(f"cannot fold record kind {record.kind!r}")

    def _apply_created(self, t: int, p: Mapping[str, Any]) -> None:
        self.config = BrokerConfig.from_dict(p["config"])
        self.seed = int(p["seed"])
        self.consumer = p.get("consumer", "default")
        self.testbed_doc = dict(p["testbed"])
        self.origin = t
        jobs = {}
        for spec in p["jobs"]:
            jobs[spec["id"]] = Job(
                id=spec["id"], binding=dict(spec["binding"]),
                command=spec["command"],
                nominal_cpu_seconds=int(spec["nominal_cpu_seconds"]))
        self.experiment = Experiment(
            id=p["experiment"], jobs=jobs,
            qos=QoSConstraints.from_dict(p["qos"]),
            accounts=Accounts(), phase=ExperimentPhase.CREATED, clock_origin=t)

    def _dequeue(self, job: Job) -> None:
        rid = job.assigned_resource
        if rid and rid in self.queues and job.id in self.queues[rid]:
            self.queues[rid].remove(job.id)

    def _apply_transition(self, p: Mapping[str, Any]) -> None:
        exp = self.exp
        kind = p["event"]
        job_id = p["job"]
        if kind == "add":
            spec = p["spec"]
            if job_id in exp.jobs:
                raise BrokerError(f"duplicate job id {job_id!r}")
            exp.jobs[job_id] = Job(
                id=job_id, binding=dict(spec["binding"]),
                command=spec["command"],
                nominal_cpu_seconds=int(spec["nominal_cpu_seconds"]))
            return
        job = exp.jobs[job_id]
        if kind == "assign":
            exp.jobs[job_id] = transition_job(job, Assign(p["resource"]))
            self.queues.setdefault(p["resource"], []).append(job_id)
        elif kind == "stage":
            self._dequeue(job)
            exp.jobs[job_id] = transition_job(job, Stage())
            exp.accounts.committed += p["authorized"]
            self.commitments[job_id] = Commitment(
                p["resource"], p["node"], p["price"], p["authorized"])
        elif kind == "start":
            exp.jobs[job_id] = transition_job(job, Start(p["node"], p["at"]))
        elif kind == "complete":
            exp.jobs[job_id] = transition_job(job, Complete(p["at"]))
        elif kind == "fail":
            exp.jobs[job_id] = transition_job(
                job, Fail(p["at"], AttemptOutcome(p["outcome"])))
        elif kind == "requeue":
            exp.jobs[job_id] = transition_job(job, Requeue())
        elif kind in ("cancel", "recover"):
            self._dequeue(job)
            released = int(p.get("released", 0))
            exp.accounts.committed -= released
            if exp.accounts.committed < 0:
                raise BrokerError("committed funds went negative in fold")
            self.commitments.pop(job_id, None)
            event = Cancel(p["at"]) if kind == "cancel" else Recover(p["at"])
            exp.jobs[job_id] = transition_job(job, event)
        else:
            raise BrokerError(f"unknown job transition {kind!r}")

    def _apply_attempt_closed(self, t: int, p: Mapping[str, Any]) -> None:
        exp = self.exp
        job = exp.jobs[p["job"]]
        open_att = job.open_attempt
        if open_att is None:
            raise UnknownAttempt(f"{job.id} has no open attempt to close")
        outcome = AttemptOutcome(p["outcome"])
        closed = open_att.close(int(p["end"]), int(p["cpu_seconds"]),
                                int(p["wall_seconds"]), outcome)
        exp.jobs[job.id] = replace(job, attempts=job.attempts[:-1] + (closed,))
        exp.accounts.spent += int(p["cost"])
        exp.accounts.committed -= int(p["released"])
        if exp.accounts.committed < 0:
            raise BrokerError("committed funds went negative in fold")
        ledger = exp.accounts.ledger(p["resource"])
        ledger.cpu_seconds += int(p["cpu_seconds"])
        ledger.cost += int(p["cost"])
        if outcome is AttemptOutcome.SUCCESS:
            ledger.jobs_done += 1
            self.profiles[p["resource"]] = update_rate(
                self.profiles.get(p["resource"], RateProfile()), closed,
                alpha=self.config.smoothing_alpha, now=t)
        self.commitments.pop(job.id, None)


def fold_journal(records: Sequence[JournalRecord]) -> EngineState:
    state = EngineState()
    for record in records:
        state.apply(record)
    return state


class TaskFarmingEngine:
    def __init__(self, sim: Simulation, fabric: GridFabric,
                 writer: JournalWriter, state: EngineState):
        self.sim = sim
        self.fabric = fabric
        self.writer = writer
        self.state = state
        self.live: dict[str, LiveAgent] = {}
        self.storage_failed = False
        sim.handlers[EventKind.QUANTUM_TICK] = self._on_tick
        sim.handlers[EventKind.AGENT_START] = self._on_agent_start
        sim.handlers[EventKind.AGENT_DONE] = self._on_agent_done
        sim.handlers[EventKind.RESOURCE_DOWN] = self._on_resource_down
        sim.handlers[EventKind.RESOURCE_UP] = self._on_resource_up
        sim.handlers[EventKind.CLIENT_COMMAND] = self._on_command

    # --- construction -------------------------------------------------------

    @classmethod
    def create(cls, specs: Sequence[JobSpec], qos: QoSConstraints, *,
               resources: Optional[Sequence[Resource]] = None,
               testbed_text: Optional[str] = None, seed: int = 1,
               config: Optional[BrokerConfig] = None,
               journal_path: Optional[Path] = None,
               experiment_id: str = "exp-1",
               origin: int = 0) -> "TaskFarmingEngine":
        cfg = config or BrokerConfig()
        if resources is None:
            if testbed_text is None:
                from .fabric import build_wwg
                resources = build_wwg()
            else:
                resources = load_testbed(testbed_text)
        sim = Simulation(start=origin)
        fabric = GridFabric(resources, sim, seed, cfg)
        writer = JournalWriter(journal_path, fsync=cfg.fsync)
        engine = cls(sim, fabric, writer, EngineState())
        job_docs = []
        seen: set[str] = set()
        for spec in specs:
            if spec.id in seen:
                raise BrokerError(f"duplicate job id {spec.id!r}")
            seen.add(spec.id)
            job_docs.append({
                "id": spec.id, "binding": dict(spec.binding),
                "command": spec.command,
                "nominal_cpu_seconds": engine._resolve_nominal(spec, seed, cfg),
            })
        engine._emit(KIND_EXPERIMENT_CREATED, {
            "experiment": experiment_id,
            "qos": qos.as_dict(),
            "seed": seed,
            "consumer": cfg.consumer,
            "config": cfg.as_dict(),
            "testbed": testbed_to_doc(resources),
            "jobs": job_docs,
        })
        return engine

    @staticmethod
    def _resolve_nominal(spec: JobSpec, seed: int, cfg: BrokerConfig) -> int:
        if spec.nominal_cpu_seconds is not None:
            return int(spec.nominal_cpu_seconds)
        base = cfg.nominal_cpu_seconds
        if cfg.nominal_jitter > 0:
            wobble = draw_range(seed, -cfg.nominal_jitter, cfg.nominal_jitter,
                                "nominal", spec.id)
            return max(1, half_up(base * (1.0 + wobble)))
        return base

    @classmethod
    def resume(cls, journal_path: Optional[Path] = None, *,
               records: Optional[Sequence[JournalRecord]] = None
               ) -> "TaskFarmingEngine":
        """Rebuild from the journal and demote whatever was in flight: the
        agents died with the previous process. Closed-but-unapplied attempts
        are rolled forward instead, so a crash between the accounting record
        and the state flip never reruns finished work."""
        if records is None:
            if journal_path is None:
                raise ValueError("need a journal path or records")
            records = read_journal(journal_path)
        if not records or records[0].kind != KIND_EXPERIMENT_CREATED:
            raise CorruptJournal("journal does not start with experiment creation",
                                 last_good_seq=0)
        verify_integrity(list(records))
        state = fold_journal(records)
        cfg = state.config
        last_t = records[-1].t
        sim = Simulation(start=last_t)
        fabric = GridFabric(resources_from_doc(state.testbed_doc), sim,
                            state.seed, cfg)
        writer = JournalWriter(journal_path, fsync=cfg.fsync)
        writer.preload(list(records))
        engine = cls(sim, fabric, writer, state)
        engine._reconcile_after_resume()
        engine._reschedule_tick_after_resume()
        return engine

    def _reconcile_after_resume(self) -> None:
        exp = self.state.exp
        now = self.sim.clock
        cfg = self.state.config
        for job_id in sorted(exp.jobs):
            job = exp.jobs[job_id]
            if job.state is JobState.FAILED:
                # a crash can split a fail/requeue pair; replay the missing
                # requeue when the retry policy would have granted one
                last = job.attempts[-1]
                prior = job.task_error_count()
                if last.outcome is AttemptOutcome.TASK_ERROR:
                    prior -= 1
                disp = detect_error(last.outcome, prior, cfg.retry_limit)
                if disp in (Disposition.FAIL_RETRY, Disposition.FAIL_REQUEUE):
                    self._emit_transition(job_id, "requeue")
                continue
            if job.state not in IN_FLIGHT_STATES:
                continue
            if job.state is JobState.SCHEDULED:
                self._emit_transition(job_id, "recover", at=now, released=0)
                continue
            com = self.state.commitments.get(job_id)
            if job.state is JobState.STAGED:
                released = com.authorized if com else 0
                self._emit_transition(job_id, "recover", at=now,
                                      released=released)
                continue
            # executing
            att = job.attempts[-1] if job.attempts else None
            if att is None or att.open:
                released = com.authorized if com else 0
                charge = min(released, cfg.lost_work_charge)
                self._emit(KIND_ATTEMPT_CLOSED, {
                    "job": job_id,
                    "resource": com.resource if com else (att.resource if att else ""),
                    "node": att.node if att else 0,
                    "start": att.start if att else now,
                    "end": now,
                    "cpu_seconds": 0,
                    "wall_seconds": max(0, now - att.start) if att else 0,
                    "outcome": AttemptOutcome.PREEMPTED.value,
                    "price": com.price if com else 0,
                    "cost": charge,
                    "released": released,
                })
                self._emit_transition(job_id, "recover", at=now, released=0)
                continue
            # attempt already closed durably; roll the state flip forward
            if att.outcome is AttemptOutcome.SUCCESS:
                self._emit_transition(job_id, "complete", at=att.end)
            elif att.outcome is AttemptOutcome.PREEMPTED:
                self._emit_transition(job_id, "recover", at=now, released=0)
            else:
                prior = job.task_error_count()
                if att.outcome is AttemptOutcome.TASK_ERROR:
                    prior -= 1  # this closed attempt is already in the count
                disp = detect_error(att.outcome, prior, cfg.retry_limit)
                self._emit_transition(job_id, "fail", at=att.end,
                                      outcome=att.outcome.value)
                if disp in (Disposition.FAIL_RETRY, Disposition.FAIL_REQUEUE):
                    self._emit_transition(job_id, "requeue")

    def _reschedule_tick_after_resume(self) -> None:
        exp = self.state.exp
        if exp.phase not in (ExperimentPhase.CALIBRATING, ExperimentPhase.RUNNING):
            return
        q = self.state.config.quantum_s
        now = self.sim.clock
        offset = now - self.state.origin
        at = now if offset % q == 0 else self.state.origin + q * (offset // q + 1)
        self.sim.schedule(at, EventKind.QUANTUM_TICK, {})

    # --- journal plumbing ---------------------------------------------------

    def _emit(self, kind: str, payload: Mapping[str, Any]) -> JournalRecord:
        record = self.writer.append(self.sim.clock, kind, payload)
        self.state.apply(record)
        return record

    def _emit_transition(self, job_id: str, event: str, **extra: Any) -> None:
        payload: dict[str, Any] = {"job": job_id, "event": event}
        payload.update(extra)
        self._emit(KIND_JOB_TRANSITION, payload)

    # --- convenience views ---------------------------------------------------

    @property
    def exp(self) -> Experiment:
        return self.state.exp

    @property
    def accounts(self) -> Accounts:
        return self.state.exp.accounts

    @property
    def records(self) -> list[JournalRecord]:
        return self.writer.records

    def snapshot(self) -> dict[str, Any]:
        exp = self.state.exp
        counts: dict[str, int] = {s.value: 0 for s in JobState}
        for job in exp.jobs.values():
            counts[job.state.value] += 1
        snap: dict[str, Any] = {
            "id": exp.id,
            "phase": exp.phase.value,
            "t": self.sim.clock,
            "origin": self.state.origin,
            "qos": exp.qos.as_dict(),
            "accounts": exp.accounts.as_dict(),
            "jobs": counts,
            "seed": self.state.seed,
        }
        if self.state.terminal_t is not None:
            # integer hundredths keep this identical across languages
            delta = self.state.terminal_t - self.state.origin
            snap["makespan_min"] = ((delta * 100 + 30) // 60) / 100
        return snap

    def query_jobs(self, state: Optional[JobState] = None,
                   resource: Optional[str] = None) -> list[dict[str, Any]]:
        out = []
        for job_id in sorted(self.state.exp.jobs):
            job = self.state.exp.jobs[job_id]
            if state is not None and job.state is not state:
                continue
            if resource is not None and job.assigned_resource != resource:
                continue
            out.append({
                "id": job.id,
                "state": job.state.value,
                "resource": job.assigned_resource,
                "command": job.command,
                "attempts": [a.as_dict() for a in job.attempts],
            })
        return out

    # --- client commands ------------------------------------------------------

    def start(self) -> None:
        if self.state.exp.phase is not ExperimentPhase.CREATED:
            raise InvalidPhase(f"cannot start in phase {self.state.exp.phase.value}")
        self._set_phase(ExperimentPhase.CALIBRATING, "experiment started")
        self.sim.schedule(self.sim.clock, EventKind.QUANTUM_TICK, {})

    def pause(self) -> None:
        phase = self.state.exp.phase
        if phase not in (ExperimentPhase.CALIBRATING, ExperimentPhase.RUNNING):
            raise InvalidPhase(f"cannot pause in phase {phase.value}")
        self._emit(KIND_PHASE_CHANGED, {
            "phase": ExperimentPhase.PAUSED.value,
            "previous": phase.value,
            "reason": "paused by client",
        })

    def resume_run(self) -> None:
        if self.state.exp.phase is not ExperimentPhase.PAUSED:
            raise InvalidPhase("only a paused experiment can resume")
        self._set_phase(self.state.paused_from, "resumed by client")
        self._reschedule_tick_after_resume()

    def stop(self, reason: str = "stopped by client") -> None:
        if self.state.exp.phase in TERMINAL_PHASES:
            raise ExperimentTerminal(f"already {self.state.exp.phase.value}")
        self._terminate(ExperimentPhase.STOPPED, reason)

    def set_qos(self, patch: Mapping[str, Any]) -> QoSConstraints:
        exp = self.state.exp
        cur = exp.qos
        requested = QoSConstraints(
            deadline_min=patch.get("deadline_min", cur.deadline_min),
            budget=patch.get("budget", cur.budget),
            strategy=Strategy(patch["strategy"]) if "strategy" in patch else cur.strategy,
            enforce_deadline=patch.get("enforce_deadline", cur.enforce_deadline),
            enforce_budget=patch.get("enforce_budget", cur.enforce_budget),
        )
        effective = effective_qos(exp, requested)
        self._emit(KIND_QOS_CHANGED, {
            "requested": requested.as_dict(),
            "effective": effective.as_dict(),
        })
        return effective

    def add_jobs(self, specs: Sequence[JobSpec]) -> list[str]:
        exp = self.state.exp
        if exp.phase in TERMINAL_PHASES:
            raise ExperimentTerminal(f"experiment is {exp.phase.value}")
        for spec in specs:
            if spec.id in exp.jobs:
                raise BrokerError(f"duplicate job id {spec.id!r}")
        ids = []
        for spec in specs:
            self._emit_transition(spec.id, "add", spec={
                "binding": dict(spec.binding),
                "command": spec.command,
                "nominal_cpu_seconds": self._resolve_nominal(
                    spec, self.state.seed, self.state.config),
            })
            ids.append(spec.id)
        return ids

    def remove_jobs(self, ids: Sequence[str]) -> None:
        exp = self.state.exp
        if exp.phase in TERMINAL_PHASES:
            raise ExperimentTerminal(f"experiment is {exp.phase.value}")
        jobs = []
        for job_id in ids:
            job = exp.jobs.get(job_id)
            if job is None:
                raise UnknownJob(job_id)
            if job.state is JobState.EXECUTING:
                raise JobExecuting(job_id)
            if job.state in TERMINAL_JOB_STATES:
                raise InvalidPhase(f"job {job_id} is already {job.state.value}")
            jobs.append(job)
        for job in jobs:
            self._cancel_job(job.id, released_only=True)

    def schedule_command(self, at: int, op: str, **args: Any) -> SimEvent:
        """Queue a steering command as a simulation event (used by the
        service loop and by scripted runs)."""
        return self.sim.schedule(at, EventKind.CLIENT_COMMAND,
                                 {"op": op, "args": args})

    def record_report(self, job_id: str, *, outcome: AttemptOutcome,
                      cpu_seconds: Optional[int] = None,
                      wall_seconds: Optional[int] = None) -> Accounts:
        """Close the live attempt for a job with an agent report and apply
        its consequences (charging, transition, retry policy, profile)."""
        token = self.live.pop(job_id, None)
        job = self.state.exp.jobs.get(job_id)
        if token is None or job is None or job.state is not JobState.EXECUTING:
            raise UnknownAttempt(f"no open attempt for job {job_id}")
        self.sim.cancel(token.start_event)
        self.sim.cancel(token.done_event)
        now = self.sim.clock
        cpu = token.cpu_total if cpu_seconds is None else cpu_seconds
        wall = (now - token.dispatched_at) if wall_seconds is None else wall_seconds
        prior_errors = job.task_error_count()
        self._emit(KIND_ATTEMPT_CLOSED, {
            "job": job_id,
            "resource": token.resource,
            "node": token.node,
            "start": token.exec_start,
            "end": now,
            "cpu_seconds": cpu,
            "wall_seconds": wall,
            "outcome": outcome.value,
            "price": token.price,
            "cost": cpu * token.price,
            "released": token.authorized,
        })
        self.fabric.release(token.resource, token.node)
        disp = detect_error(outcome, prior_errors, self.state.config.retry_limit)
        if disp is Disposition.COMPLETE:
            self._emit_transition(job_id, "complete", at=now)
        else:
            self._emit_transition(job_id, "fail", at=now, outcome=outcome.value)
            if disp in (Disposition.FAIL_RETRY, Disposition.FAIL_REQUEUE):
                self._emit_transition(job_id, "requeue")
        self._maybe_finish()
        return self.state.exp.accounts

    # --- termination paths ----------------------------------------------------

    def _set_phase(self, phase: ExperimentPhase, reason: str) -> None:
        self._emit(KIND_PHASE_CHANGED, {"phase": phase.value, "reason": reason})

    def _cancel_job(self, job_id: str, *, released_only: bool = False) -> None:
        """Cancel one non-terminal job, settling any live agent first."""
        exp = self.state.exp
        job = exp.jobs[job_id]
        now = self.sim.clock
        token = self.live.pop(job_id, None)
        if token is not None:
            self.sim.cancel(token.start_event)
            self.sim.cancel(token.done_event)
            self.fabric.release(token.resource, token.node)
        if job.state is JobState.EXECUTING and token is not None:
            elapsed = max(0, now - token.exec_start)
            cpu_part = min(token.cpu_total,
                           half_up(token.cpu_total * elapsed / max(1, token.service)))
            self._emit(KIND_ATTEMPT_CLOSED, {
                "job": job_id,
                "resource": token.resource,
                "node": token.node,
                "start": token.exec_start,
                "end": now,
                "cpu_seconds": cpu_part,
                "wall_seconds": max(0, now - token.dispatched_at),
                "outcome": AttemptOutcome.PREEMPTED.value,
                "price": token.price,
                "cost": cpu_part * token.price,
                "released": token.authorized,
            })
            self._emit_transition(job_id, "cancel", at=now, released=0)
        elif job.state is JobState.STAGED:
            released = token.authorized if token is not None else (
                self.state.commitments[job_id].authorized
                if job_id in self.state.commitments else 0)
            self._emit_transition(job_id, "cancel", at=now, released=released)
        else:
            self._emit_transition(job_id, "cancel", at=now, released=0)

    def _terminate(self, phase: ExperimentPhase, reason: str) -> None:
        exp = self.state.exp
        for job_id in sorted(exp.jobs):
            if exp.jobs[job_id].state not in TERMINAL_JOB_STATES:
                self._cancel_job(job_id)
        self._write_mark(self.sim.clock, exp.phase, final=True)
        self._set_phase(phase, reason)

    def _maybe_finish(self) -> bool:
        exp = self.state.exp
        if exp.phase in TERMINAL_PHASES or exp.phase in (
                ExperimentPhase.CREATED, ExperimentPhase.PAUSED):
            return False
        if not exp.all_settled():
            return False
        self._write_mark(self.sim.clock, exp.phase, final=True)
        # Completed means every job is Done, nothing weaker. A mix of done,
        # permanently failed and withdrawn jobs is an honest Stopped.
        if all(j.state is JobState.DONE for j in exp.jobs.values()):
            self._set_phase(ExperimentPhase.COMPLETED, "all jobs done")
        else:
            failed = len(exp.in_state(JobState.FAILED))
            cancelled = len(exp.in_state(JobState.CANCELLED))
            parts = []
            if failed:
                parts.append(f"{failed} jobs failed permanently")
            if cancelled:
                parts.append(f"{cancelled} jobs withdrawn")
            self._set_phase(ExperimentPhase.STOPPED,
                            "; ".join(parts) or "nothing left to run")
        return True

    # --- quantum handling -------------------------------------------------------

    def _on_tick(self, ev: SimEvent) -> None:
        exp = self.state.exp
        if exp.phase in TERMINAL_PHASES or exp.phase in (
                ExperimentPhase.CREATED, ExperimentPhase.PAUSED):
            return
        now = self.sim.clock
        cfg = self.state.config
        qos = exp.qos
        if self._maybe_finish():
            return
        if (qos.enforce_deadline and now >= self.state.origin + qos.deadline_s
                and not exp.all_settled()):
            unfinished = len(exp.unfinished())
            self._terminate(ExperimentPhase.FAILED_DEADLINE,
                            f"deadline passed with {unfinished} jobs unfinished")
            return

        try:
            quoted = discover_resources(self.fabric, self.state.consumer, now,
                                        ttl=cfg.quote_ttl_s)
        except NoResources:
            self._write_mark(now, exp.phase, infeasible="no_resources")
            self.sim.schedule(now + cfg.quantum_s, EventKind.QUANTUM_TICK, {})
            return

        contracts: dict[str, Contract] = {}
        for resource, offer in quoted:
            deal = negotiate(TradeRequest(resource.id, offer.price), offer, now)
            assert isinstance(deal, Contract)
            contracts[resource.id] = deal

        replanned = False
        moved_count = 0
        assigned_count = 0
        infeasible: Optional[str] = None
        est_cost: Optional[int] = None
        est_completion: Optional[int] = None

        phase = exp.phase
        if phase is ExperimentPhase.CALIBRATING:
            unmeasured = [(r, q) for r, q in quoted
                          if self.state.profiles.get(r.id) is None]
            if not unmeasured:
                self._set_phase(ExperimentPhase.RUNNING,
                                "calibration measurements complete")
                phase = ExperimentPhase.RUNNING
            else:
                busy = {tok.resource for tok in self.live.values()}
                idle = [(r, q) for r, q in unmeasured
                        if not self.state.queues.get(r.id) and r.id not in busy]
                ready = sorted(j.id for j in exp.in_state(JobState.READY))
                if idle and ready:
                    alloc = calibrate(idle, ready, now, config=cfg)
                    for rid, queue in alloc.queues.items():
                        for job_id in queue:
                            self._emit_transition(job_id, "assign", resource=rid)
                            assigned_count += 1
                    replanned = True
                    est_cost = alloc.estimated_cost
                    est_completion = alloc.estimated_completion

        if phase is ExperimentPhase.RUNNING:
            plan_ids = sorted(
                j.id for j in exp.jobs.values()
                if j.state in (JobState.READY, JobState.SCHEDULED))
            if plan_ids:
                accounts = exp.accounts
                # staged/executing jobs hold nodes through the next wave,
                # so the planner must not hand their slots out again
                busy = {rid: len(nodes)
                        for rid, nodes in self.fabric.occupancy.items() if nodes}
                result = plan_allocation(
                    qos.strategy, plan_ids, quoted, self.state.profiles, qos,
                    accounts.spent + accounts.committed, now,
                    origin=self.state.origin, busy=busy, config=cfg)
                if isinstance(result, Infeasibility):
                    infeasible = result.kind.value
                    if self.state.last_infeasible == infeasible:
                        self._terminate(_FAIL_PHASE[result.kind], result.detail)
                        return
                else:
                    replanned = True
                    est_cost = result.estimated_cost
                    est_completion = result.estimated_completion
                    old = {j.id: j.assigned_resource for j in exp.jobs.values()
                           if j.state is JobState.SCHEDULED
                           and j.assigned_resource}
                    new = result.assignments()
                    for job_id, frm, to in diff_assignments(old, new):
                        if frm is not None:
                            self._emit_transition(job_id, "recover", at=now,
                                                  released=0)
                            moved_count += 1
                        else:
                            assigned_count += 1
                        self._emit_transition(job_id, "assign", resource=to)
                    for job_id in sorted(set(old) - set(new)):
                        self._emit_transition(job_id, "recover", at=now,
                                              released=0)
                        moved_count += 1

        dispatched, withheld = self._dispatch(contracts, now)
        if (qos.enforce_budget and withheld > 0 and dispatched == 0
                and not self.live and infeasible is None):
            infeasible = InfeasibilityKind.BUDGET.value
            if self.state.last_infeasible == infeasible:
                self._terminate(ExperimentPhase.FAILED_BUDGET,
                                "remaining budget cannot fund a single dispatch")
                return

        self._write_mark(now, phase, replanned=replanned, infeasible=infeasible,
                         moved=moved_count, assigned=assigned_count,
                         withheld=withheld, dispatched=dispatched,
                         estimated_cost=est_cost,
                         estimated_completion=est_completion)
        self.sim.schedule(now + cfg.quantum_s, EventKind.QUANTUM_TICK, {})

    def _dispatch(self, contracts: Mapping[str, Contract],
                  now: int) -> tuple[int, int]:
        exp = self.state.exp
        cfg = self.state.config
        queues = {}
        for rid, queue in self.state.queues.items():
            if queue and rid in contracts and self.fabric.resource(rid).up:
                queues[rid] = tuple(queue)
        if not queues:
            return 0, 0
        free = {rid: self.fabric.free_nodes(rid, now) for rid in queues}
        authorize = {}
        for rid, queue in queues.items():
            est = estimate_seconds(self.state.profiles.get(rid), cfg)
            for job_id in queue:
                nominal = exp.jobs[job_id].nominal_cpu_seconds or cfg.nominal_cpu_seconds
                # cpu_seconds is the exact eventual charge basis, so the
                # authorization can never be undercut by a fast finish on a
                # slow node; the measured estimate only adds headroom
                cpu_exp = self.fabric.cpu_seconds(nominal, rid)
                authorize[job_id] = contracts[rid].price * max(est, cpu_exp)
        accounts = exp.accounts
        budget_left = (exp.qos.budget - accounts.spent - accounts.committed
                       if exp.qos.enforce_budget else None)
        plan = plan_dispatch(queues, free, contracts, authorize, budget_left)
        for action in plan.actions:
            self._launch(action, now)
        return len(plan.actions), plan.withheld_for_budget

    def _launch(self, action: DispatchAction, now: int) -> None:
        exp = self.state.exp
        cfg = self.state.config
        job = exp.jobs[action.job_id]
        nominal = job.nominal_cpu_seconds or cfg.nominal_cpu_seconds
        service = max(1, self.fabric.service_time(nominal, action.job_id,
                                                  action.resource))
        cpu_total = self.fabric.cpu_seconds(nominal, action.resource)
        attempt_no = len(job.attempts)
        self._emit_transition(action.job_id, "stage", resource=action.resource,
                              node=action.node, price=action.contract.price,
                              authorized=action.authorized_cost)
        self.fabric.occupy(action.resource, action.node, action.job_id)
        exec_start = now + cfg.stage_delay_s
        start_event = self.sim.schedule(exec_start, EventKind.AGENT_START,
                                        {"job": action.job_id})
        done_event = self.sim.schedule(exec_start + service, EventKind.AGENT_DONE,
                                       {"job": action.job_id})
        self.live[action.job_id] = LiveAgent(
            job_id=action.job_id, resource=action.resource, node=action.node,
            price=action.contract.price, authorized=action.authorized_cost,
            dispatched_at=now, exec_start=exec_start, service=service,
            cpu_total=cpu_total, attempt_no=attempt_no,
            start_event=start_event, done_event=done_event)

    def _write_mark(self, now: int, phase: ExperimentPhase, *,
                    replanned: bool = False, infeasible: Optional[str] = None,
                    moved: int = 0, assigned: int = 0, withheld: int = 0,
                    dispatched: int = 0, estimated_cost: Optional[int] = None,
                    estimated_completion: Optional[int] = None,
                    final: bool = False) -> None:
        exp = self.state.exp
        accounts = exp.accounts
        per_resource = {}
        executing_total = 0
        done_total = 0
        for rid in self.fabric.resources:
            ledger = accounts.ledgers.get(rid)
            executing = len(self.fabric.occupancy[rid])
            per_resource[rid] = {
                "executing": executing,
                "done_cum": ledger.jobs_done if ledger else 0,
                "spent": ledger.cost if ledger else 0,
            }
            executing_total += executing
            done_total += per_resource[rid]["done_cum"]
        self._emit(KIND_QUANTUM_MARK, {
            "now": now,
            "phase": phase.value,
            "replanned": replanned,
            "infeasible": infeasible,
            "moved": moved,
            "assigned": assigned,
            "withheld": withheld,
            "dispatched": dispatched,
            "estimated_cost": estimated_cost,
            "estimated_completion": estimated_completion,
            "final": final,
            "spent": accounts.spent,
            "committed": accounts.committed,
            "executing": executing_total,
            "done": done_total,
            "resources": per_resource,
        })

    # --- remaining event handlers ---------------------------------------------

    def _on_agent_start(self, ev: SimEvent) -> None:
        job_id = ev.payload["job"]
        token = self.live.get(job_id)
        if token is None:
            return
        self._emit_transition(job_id, "start", node=token.node,
                              at=self.sim.clock)

    def _on_agent_done(self, ev: SimEvent) -> None:
        job_id = ev.payload["job"]
        token = self.live.get(job_id)
        if token is None:
            return
        cfg = self.state.config
        outcome = AttemptOutcome.SUCCESS
        if cfg.task_error_prob > 0 and chance(
                self.state.seed, cfg.task_error_prob, "task_error",
                token.resource, job_id, token.attempt_no):
            outcome = AttemptOutcome.TASK_ERROR
        self.record_report(job_id, outcome=outcome)

    def _on_resource_down(self, ev: SimEvent) -> None:
        rid = ev.payload["resource"]
        resource = self.fabric.resource(rid)
        resource.up = False
        now = self.sim.clock
        exp = self.state.exp
        victims = sorted(job_id for job_id, tok in self.live.items()
                         if tok.resource == rid)
        for job_id in victims:
            token = self.live.pop(job_id)
            self.sim.cancel(token.start_event)
            self.sim.cancel(token.done_event)
            self.fabric.release(rid, token.node)
            job = exp.jobs[job_id]
            if job.state is JobState.EXECUTING:
                elapsed = max(0, now - token.exec_start)
                cpu_part = min(token.cpu_total,
                               half_up(token.cpu_total * elapsed /
                                       max(1, token.service)))
                self._emit(KIND_ATTEMPT_CLOSED, {
                    "job": job_id,
                    "resource": rid,
                    "node": token.node,
                    "start": token.exec_start,
                    "end": now,
                    "cpu_seconds": cpu_part,
                    "wall_seconds": max(0, now - token.dispatched_at),
                    "outcome": AttemptOutcome.RESOURCE_FAILURE.value,
                    "price": token.price,
                    "cost": cpu_part * token.price,
                    "released": token.authorized,
                })
                self._emit_transition(job_id, "fail", at=now,
                                      outcome=AttemptOutcome.RESOURCE_FAILURE.value)
                self._emit_transition(job_id, "requeue")
            else:  # staged, agent never started
                self._emit_transition(job_id, "recover", at=now,
                                      released=token.authorized)

    def _on_resource_up(self, ev: SimEvent) -> None:
        self.fabric.resource(ev.payload["resource"]).up = True

    def _on_command(self, ev: SimEvent) -> None:
        op = ev.payload["op"]
        args = dict(ev.payload.get("args", {}))
        future = ev.payload.get("future")
        handler = {
            "start": self.start,
            "pause": self.pause,
            "resume": self.resume_run,
            "stop": self.stop,
            "qos": lambda: self.set_qos(args.get("patch", args)),
            "add_jobs": lambda: self.add_jobs(args["specs"]),
            "remove_jobs": lambda: self.remove_jobs(args["ids"]),
        }.get(op)
        if handler is None:
            error: Optional[Exception] = BrokerError(f"unknown command {op!r}")
            result = None
        else:
            try:
                result = handler()
                error = None
            except Exception as exc:  # surfaced to the caller, never swallowed
                error = exc
                result = None
        if future is not None:
            if error is not None:
                future.set_exception(error)
            else:
                future.set_result(result)
        elif error is not None:
            raise error

    # --- driving ---------------------------------------------------------------

    def run(self, *, max_events: int = 2_000_000) -> ExperimentPhase:
        """Advance until the experiment reaches a terminal phase or the
        event queue drains (paused experiments drain and stay paused)."""
        steps = 0
        while (self.sim.pending()
               and self.state.exp.phase not in TERMINAL_PHASES):
            try:
                self.sim.advance()
            except StorageFailure:
                # write-ahead means memory is still consistent with the last
                # durable record; freeze rather than run ahead of the journal
                self.storage_failed = True
                self.state.exp.phase = ExperimentPhase.PAUSED
                break
            steps += 1
            if steps > max_events:
                raise BrokerError("event budget exceeded; simulation is stuck")
        return self.state.exp.phase


def run_experiment(specs: Sequence[JobSpec], qos: QoSConstraints, *,
                   resources: Optional[Sequence[Resource]] = None,
                   testbed_text: Optional[str] = None, seed: int = 1,
                   config: Optional[BrokerConfig] = None,
                   journal_path: Optional[Path] = None,
                   experiment_id: str = "exp-1") -> TaskFarmingEngine:
    """Create, start and drive an experiment to quiescence in one call."""
    engine = TaskFarmingEngine.create(
        specs, qos, resources=resources, testbed_text=testbed_text, seed=seed,
        config=config, journal_path=journal_path, experiment_id=experiment_id)
    engine.start()
    engine.run()
    return engine
