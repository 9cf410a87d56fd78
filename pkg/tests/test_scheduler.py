"""Allocation strategies checked against exhaustive-enumeration oracles.

The two optimizers plan over interchangeable jobs, so an assignment is
fully described by per-resource counts. For small instances every count
vector can be enumerated and the true optimum computed independently of
the production code; the strategies must match it exactly.
"""

import math
import random

import pytest

from gridbroker.config import BrokerConfig
from gridbroker.fabric import GridFabric, Simulation
from gridbroker.model import AttemptOutcome, AttemptRecord, Strategy
from gridbroker.scheduler import (
    Allocation, Infeasibility, InfeasibilityKind, NoResources, RateProfile,
    calibrate, capacity_by_deadline, diff_assignments, discover_resources,
    estimate_seconds, plan, schedule_cost_opt, schedule_time_opt, update_rate,
)
from helpers import make_qos, measured, quoted_at, resource

CFG = BrokerConfig()


# --- the oracle ---------------------------------------------------------------

def compositions(n, k):
    """Every way to split n identical jobs over k resources."""
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in compositions(n - first, k - 1):
            yield (first,) + rest


def enumerate_optima(n_jobs, rates, prices, nodes, window, budget):
    """Brute force both optima over all assignments.

    Returns (cheapest cost among deadline-feasible assignments, smallest
    makespan among assignments feasible under deadline AND budget); either
    is None when nothing qualifies.
    """
    best_cost = None
    best_makespan = None
    for combo in compositions(n_jobs, len(rates)):
        makespan = 0
        cost = 0
        for c, rate, price, width in zip(combo, rates, prices, nodes):
            if c == 0:
                continue
            makespan = max(makespan, math.ceil(c / width) * rate)
            cost += c * price * rate
        if makespan > window:
            continue
        if best_cost is None or cost < best_cost:
            best_cost = cost
        if cost <= budget and (best_makespan is None or makespan < best_makespan):
            best_makespan = makespan
    return best_cost, best_makespan


def random_instance(rng):
    k = rng.randint(1, 3)
    n = rng.randint(1, 8)
    rates = [rng.randint(1, 9) * 60 for _ in range(k)]
    prices = [rng.randint(1, 9) for _ in range(k)]
    nodes = [rng.randint(1, 3) for _ in range(k)]
    window = rng.randint(1, 20) * 60
    budget = rng.choice([10**9, rng.randint(1, 40) * 600])
    return n, rates, prices, nodes, window, budget


def build_inputs(rates, prices, nodes):
    rs = [resource(f"r{i}", nodes[i], prices[i]) for i in range(len(rates))]
    profiles = {f"r{i}": measured(rates[i]) for i in range(len(rates))}
    return quoted_at(rs), profiles


def test_cost_opt_matches_enumeration_oracle():
    rng = random.Random(0x5EED)
    allocations = 0
    for _ in range(250):
        n, rates, prices, nodes, window, budget = random_instance(rng)
        quoted, profiles = build_inputs(rates, prices, nodes)
        qos = make_qos(deadline_min=window / 60, budget=budget)
        ids = [f"job{j}" for j in range(n)]
        got = schedule_cost_opt(ids, quoted, profiles, qos, 0, 0)
        best_cost, _ = enumerate_optima(n, rates, prices, nodes, window, budget)
        if best_cost is None:
            assert isinstance(got, Infeasibility)
            assert got.kind is InfeasibilityKind.DEADLINE
        elif best_cost > budget:
            assert isinstance(got, Infeasibility)
            assert got.kind is InfeasibilityKind.BUDGET
        else:
            assert isinstance(got, Allocation), got
            assert got.estimated_cost == best_cost
            assert got.total() == n
            assert sorted(got.assignments()) == sorted(ids)
            allocations += 1
    assert allocations >= 100


def test_time_opt_matches_enumeration_oracle():
    rng = random.Random(0x713E)
    allocations = 0
    for _ in range(250):
        n, rates, prices, nodes, window, budget = random_instance(rng)
        quoted, profiles = build_inputs(rates, prices, nodes)
        qos = make_qos(deadline_min=window / 60, budget=budget,
                       strategy=Strategy.TIME)
        ids = [f"job{j}" for j in range(n)]
        got = schedule_time_opt(ids, quoted, profiles, qos, 0, 0)
        best_cost, best_makespan = enumerate_optima(
            n, rates, prices, nodes, window, budget)
        if best_makespan is not None:
            assert isinstance(got, Allocation), got
            assert got.estimated_completion == best_makespan
            assert got.total() == n
            allocations += 1
        elif best_cost is not None:
            # something met the deadline but nothing met the budget
            assert isinstance(got, Infeasibility)
            assert got.kind is InfeasibilityKind.BUDGET
        else:
            assert isinstance(got, Infeasibility)
            assert got.kind is InfeasibilityKind.DEADLINE
    assert allocations >= 100


def test_time_opt_picks_cheapest_fill_at_its_makespan():
    """Among fills achieving the minimal makespan the scan keeps the cost
    greedy, so the reported cost is the cheapest one for that horizon."""
    rng = random.Random(0xFEE1)
    for _ in range(120):
        n, rates, prices, nodes, window, budget = random_instance(rng)
        quoted, profiles = build_inputs(rates, prices, nodes)
        qos = make_qos(deadline_min=window / 60, budget=budget,
                       strategy=Strategy.TIME)
        got = schedule_time_opt([f"j{j}" for j in range(n)], quoted, profiles,
                                qos, 0, 0)
        if not isinstance(got, Allocation):
            continue
        horizon = got.estimated_completion
        cheapest = min(
            (sum(c * p * r for c, r, p in zip(combo, rates, prices))
             for combo in compositions(n, len(rates))
             if all(j == 0 or math.ceil(j / w) * r <= horizon
                    for j, r, w in zip(combo, rates, nodes))),
            default=None)
        assert cheapest == got.estimated_cost


# --- capacity and estimates ---------------------------------------------------

def test_capacity_formula():
    r = resource("r1", 4, 1)
    p = measured(100)
    assert capacity_by_deadline(r, p, now=0, deadline=350) == 12  # 3 waves x 4
    assert capacity_by_deadline(r, p, now=0, deadline=99) == 0
    assert capacity_by_deadline(r, p, now=400, deadline=350) == 0
    # exact multiple is not lost to float fuzz
    assert capacity_by_deadline(r, measured(300.0), 0, 900) == 12
    assert capacity_by_deadline(r, None, 0, 900, allotment=2) == 2


def test_capacity_discounts_busy_nodes():
    r = resource("r1", 4, 1)
    p = measured(100)
    assert capacity_by_deadline(r, p, 0, 350, busy=3) == 9
    assert capacity_by_deadline(r, p, 0, 350, busy=99) == 0
    assert capacity_by_deadline(r, None, 0, 350, allotment=1, busy=1) == 0


def test_busy_occupancy_shrinks_allocations():
    quoted, profiles = build_inputs([60], [1], [2])
    qos = make_qos(deadline_min=2, budget=10**9)
    free = schedule_cost_opt(["a", "b", "c", "d"], quoted, profiles, qos, 0, 0)
    assert isinstance(free, Allocation) and free.total() == 4
    held = schedule_cost_opt(["a", "b", "c", "d"], quoted, profiles, qos, 0, 0,
                             busy={"r0": 1})
    assert isinstance(held, Infeasibility)
    assert held.kind is InfeasibilityKind.DEADLINE
    # and the completion estimate counts the occupied slot's wave
    three = schedule_cost_opt(["a", "b", "c"], quoted, profiles, qos, 0, 0,
                              busy={"r0": 1})
    assert isinstance(three, Allocation)
    assert three.estimated_completion == 120  # ceil((3+1)/2) waves x 60


def test_estimate_falls_back_to_config_default():
    assert estimate_seconds(None, CFG) == CFG.default_estimate_s
    assert estimate_seconds(RateProfile(), CFG) == CFG.default_estimate_s
    assert estimate_seconds(measured(0.2), CFG) == 1  # clamped up


def test_update_rate_smooths_successes_only():
    p = RateProfile()
    report = AttemptRecord("r1", 0, 0, end=80, cpu_seconds=70, wall_seconds=80,
                           outcome=AttemptOutcome.SUCCESS)
    p = update_rate(p, report, alpha=0.3, now=80)
    assert p.measured == 80.0 and p.samples == 1
    second = AttemptRecord("r1", 0, 0, end=180, cpu_seconds=90, wall_seconds=100,
                           outcome=AttemptOutcome.SUCCESS)
    p = update_rate(p, second, alpha=0.3, now=180)
    assert p.measured == pytest.approx(0.3 * 100 + 0.7 * 80)
    assert p.samples == 2
    failed = AttemptRecord("r1", 0, 0, end=200, cpu_seconds=1, wall_seconds=1,
                           outcome=AttemptOutcome.TASK_ERROR)
    assert update_rate(p, failed, now=200) == p


# --- calibration and discovery --------------------------------------------------

def test_calibrate_touches_every_resource_cheapest_first():
    quoted = quoted_at([resource("exp", 4, 9), resource("cheap", 4, 1),
                        resource("mid", 1, 5)])
    alloc = calibrate(quoted, [f"j{i}" for i in range(10)], now=0, config=CFG)
    assert list(alloc.queues) == ["cheap", "mid", "exp"]
    assert all(len(q) == 1 for q in alloc.queues.values())
    assert alloc.estimated_cost == (1 + 5 + 9) * CFG.default_estimate_s


def test_calibrate_with_fewer_jobs_than_resources():
    quoted = quoted_at([resource("a", 1, 3), resource("b", 1, 2)])
    alloc = calibrate(quoted, ["only"], now=0, config=CFG)
    assert alloc.queues == {"b": ("only",)}


def test_empty_grid_raises_no_resources():
    with pytest.raises(NoResources):
        calibrate([], ["j"], now=0, config=CFG)
    qos = make_qos()
    with pytest.raises(NoResources):
        schedule_cost_opt(["j"], [], {}, qos, 0, 0)
    with pytest.raises(NoResources):
        schedule_time_opt(["j"], [], {}, qos, 0, 0)


def test_discover_skips_down_resources():
    up, down = resource("up", 1, 1), resource("down", 1, 1)
    down.up = False
    fab = GridFabric([up, down], Simulation(), seed=0)
    pairs = discover_resources(fab, "default", now=0)
    assert [r.id for r, _ in pairs] == ["up"]
    up.up = False
    with pytest.raises(NoResources):
        discover_resources(fab, "default", now=0)


# --- shared plumbing ------------------------------------------------------------

def test_unenforced_deadline_uses_single_cheapest_resource():
    quoted, profiles = build_inputs([60, 60], [1, 9], [1, 5])
    qos = make_qos(deadline_min=1, budget=10**9, enforce_deadline=False)
    got = schedule_cost_opt([f"j{i}" for i in range(7)], quoted, profiles,
                            qos, 0, 0)
    assert isinstance(got, Allocation)
    assert got.counts() == {"r0": 7}


def test_unenforced_budget_never_blocks_cost_opt():
    quoted, profiles = build_inputs([60], [9], [1])
    qos = make_qos(deadline_min=10, budget=0, enforce_budget=False)
    got = schedule_cost_opt(["a"], quoted, profiles, qos, 0, 0)
    assert isinstance(got, Allocation)


def test_spent_counts_against_budget():
    quoted, profiles = build_inputs([60], [1], [1])
    qos = make_qos(deadline_min=10, budget=100)
    got = schedule_cost_opt(["a"], quoted, profiles, qos, spent=90, now=0)
    assert isinstance(got, Infeasibility)
    assert got.kind is InfeasibilityKind.BUDGET


def test_zero_jobs_is_a_trivial_allocation():
    got = plan(Strategy.COST, [], [], {}, make_qos(), 0, now=7)
    assert got == Allocation(queues={}, estimated_completion=7, estimated_cost=0)


def test_plan_dispatches_on_strategy():
    quoted, profiles = build_inputs([60, 120], [1, 2], [1, 4])
    ids = [f"j{i}" for i in range(5)]
    qos_cost = make_qos(deadline_min=100, budget=10**9)
    qos_time = make_qos(deadline_min=100, budget=10**9, strategy=Strategy.TIME)
    by_cost = plan(Strategy.COST, ids, quoted, profiles, qos_cost, 0, 0)
    by_time = plan(Strategy.TIME, ids, quoted, profiles, qos_time, 0, 0)
    assert by_cost == schedule_cost_opt(ids, quoted, profiles, qos_cost, 0, 0)
    assert by_time == schedule_time_opt(ids, quoted, profiles, qos_time, 0, 0)


def test_allocation_rejects_duplicate_assignment():
    alloc = Allocation(queues={"a": ("j1",), "b": ("j1",)},
                       estimated_completion=0, estimated_cost=0)
    with pytest.raises(ValueError):
        alloc.assignments()


def test_diff_assignments_lists_moves_sorted():
    old = {"j1": "a", "j2": "b", "j4": "a"}
    new = {"j1": "a", "j2": "c", "j3": "b"}
    assert diff_assignments(old, new) == [("j2", "b", "c"), ("j3", None, "b")]
