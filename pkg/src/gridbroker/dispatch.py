"""Dispatch planning and agent outcome classification.

The dispatcher turns the current allocation queues into concrete
job-to-node placements, as many per resource as there are free nodes,
withholding any placement whose authorization would break the budget.
Withheld jobs stay queued; the engine notices and asks for a replan.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence

from .model import AttemptOutcome
from .trading import Contract


@dataclass(frozen=True)
class DispatchAction:
    job_id: str
    resource: str
    node: int
    contract: Contract
    authorized_cost: int

    def __post_init__(self) -> None:
        if self.authorized_cost <= 0:
            raise ValueError("authorized_cost must be positive")


@dataclass(frozen=True)
class DispatchPlan:
    actions: tuple[DispatchAction, ...]
    withheld_for_budget: int


def plan_dispatch(queues: Mapping[str, Sequence[str]],
                  free_nodes: Mapping[str, Sequence[int]],
                  contracts: Mapping[str, Contract],
                  authorize: Mapping[str, int],
                  budget_left: Optional[int]) -> DispatchPlan:
    """Pair queued jobs with free nodes, resource by resource in sorted id
    order, queue order preserved within a resource. ``authorize`` maps job
    id to the cost to commit for it; ``budget_left`` of None means the
    budget is not enforced. A job whose authorization does not fit is
    withheld without blocking later, cheaper placements."""
    actions: list[DispatchAction] = []
    withheld = 0
    remaining = budget_left
    for rid in sorted(queues):
        queue = queues[rid]
        nodes = list(free_nodes.get(rid, ()))
        contract = contracts.get(rid)
        if contract is None:
            continue
        node_i = 0
        for job_id in queue:
            if node_i >= len(nodes):
                break
            cost = authorize[job_id]
            if remaining is not None and cost > remaining:
                withheld += 1
                continue
            if remaining is not None:
                remaining -= cost
            actions.append(DispatchAction(job_id=job_id, resource=rid,
                                          node=nodes[node_i], contract=contract,
                                          authorized_cost=cost))
            node_i += 1
    return DispatchPlan(actions=tuple(actions), withheld_for_budget=withheld)


class Disposition(str, Enum):
    COMPLETE = "complete"
    FAIL_RETRY = "fail_retry"          # counts against the retry limit
    FAIL_TERMINAL = "fail_terminal"    # retries exhausted, job stays Failed
    FAIL_REQUEUE = "fail_requeue"      # resource fault, retry for free


def detect_error(outcome: AttemptOutcome, prior_task_errors: int,
                 retry_limit: int) -> Disposition:
    """Classify a finished attempt. Task errors burn retries; resource
    failures never do (the job did nothing wrong)."""
    if outcome is AttemptOutcome.SUCCESS:
        return Disposition.COMPLETE
    if outcome is AttemptOutcome.RESOURCE_FAILURE:
        return Disposition.FAIL_REQUEUE
    if outcome is AttemptOutcome.TASK_ERROR:
        if prior_task_errors + 1 > retry_limit:
            return Disposition.FAIL_TERMINAL
        return Disposition.FAIL_RETRY
    # preempted attempts are closed by the engine itself, never reported
    raise ValueError(f"agents never report outcome {outcome!r}")
