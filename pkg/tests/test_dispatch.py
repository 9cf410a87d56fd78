"""Dispatch planning and outcome classification."""

import pytest

from gridbroker.dispatch import (
    DispatchAction, Disposition, detect_error, plan_dispatch,
)
from gridbroker.model import AttemptOutcome
from gridbroker.trading import Contract

C1 = Contract("r1", 2, 0)
C2 = Contract("r2", 5, 0)


def test_pairs_jobs_with_free_nodes_in_queue_order():
    plan = plan_dispatch(
        queues={"r1": ("a", "b", "c"), "r2": ("d",)},
        free_nodes={"r1": [4, 7], "r2": [0]},
        contracts={"r1": C1, "r2": C2},
        authorize={"a": 10, "b": 10, "c": 10, "d": 20},
        budget_left=None)
    assert [(x.job_id, x.resource, x.node) for x in plan.actions] == [
        ("a", "r1", 4), ("b", "r1", 7), ("d", "r2", 0)]
    assert plan.withheld_for_budget == 0


def test_budget_withholds_without_blocking_cheaper_jobs():
    plan = plan_dispatch(
        queues={"r1": ("big", "small")},
        free_nodes={"r1": [0, 1]},
        contracts={"r1": C1},
        authorize={"big": 100, "small": 10},
        budget_left=50)
    assert [x.job_id for x in plan.actions] == ["small"]
    assert plan.withheld_for_budget == 1


def test_budget_left_none_means_unenforced():
    plan = plan_dispatch(
        queues={"r1": ("a",)}, free_nodes={"r1": [0]},
        contracts={"r1": C1}, authorize={"a": 10**9}, budget_left=None)
    assert len(plan.actions) == 1


def test_no_contract_no_dispatch():
    plan = plan_dispatch(
        queues={"r1": ("a",)}, free_nodes={"r1": [0]},
        contracts={}, authorize={"a": 1}, budget_left=None)
    assert plan.actions == ()


def test_budget_is_consumed_across_resources():
    plan = plan_dispatch(
        queues={"r1": ("a",), "r2": ("b",)},
        free_nodes={"r1": [0], "r2": [0]},
        contracts={"r1": C1, "r2": C2},
        authorize={"a": 30, "b": 30},
        budget_left=50)
    assert [x.job_id for x in plan.actions] == ["a"]
    assert plan.withheld_for_budget == 1


def test_action_requires_positive_authorization():
    with pytest.raises(ValueError):
        DispatchAction("j", "r1", 0, C1, authorized_cost=0)


@pytest.mark.parametrize("outcome,prior,limit,want", [
    (AttemptOutcome.SUCCESS, 0, 3, Disposition.COMPLETE),
    (AttemptOutcome.SUCCESS, 99, 3, Disposition.COMPLETE),
    (AttemptOutcome.RESOURCE_FAILURE, 0, 3, Disposition.FAIL_REQUEUE),
    (AttemptOutcome.RESOURCE_FAILURE, 99, 0, Disposition.FAIL_REQUEUE),
    (AttemptOutcome.TASK_ERROR, 0, 3, Disposition.FAIL_RETRY),
    (AttemptOutcome.TASK_ERROR, 2, 3, Disposition.FAIL_RETRY),
    (AttemptOutcome.TASK_ERROR, 3, 3, Disposition.FAIL_TERMINAL),
    (AttemptOutcome.TASK_ERROR, 0, 0, Disposition.FAIL_TERMINAL),
])
def test_detect_error_table(outcome, prior, limit, want):
    assert detect_error(outcome, prior, limit) is want


def test_preempted_is_never_an_agent_report():
    with pytest.raises(ValueError):
        detect_error(AttemptOutcome.PREEMPTED, 0, 3)
