"""Journal-derived reporting: time series CSV and the run summary.

Everything here reads the journal only; no live engine required. Minute
values are rendered through integer arithmetic (hundredths, rounded half
up) so any other consumer of the stream can reproduce the CSV bytes
without touching floating point.
"""

from __future__ import annotations

from typing import Any, Mapping, Optional, Sequence

from .journal import (KIND_EXPERIMENT_CREATED, KIND_PHASE_CHANGED,
                      KIND_QUANTUM_MARK, JournalRecord)
from .model import BrokerError, ExperimentPhase


class NoData(BrokerError):
    """The journal holds nothing to report on."""


def minutes_str(t_seconds: int, origin: int = 0) -> str:
    """Virtual seconds since origin as a fixed two-decimal minute string."""
    delta = t_seconds - origin
    if delta < 0:
        raise ValueError("instant precedes the origin")
    hundredths = (delta * 100 + 30) // 60
    return f"{hundredths // 100}.{hundredths % 100:02d}"


def _origin(records: Sequence[JournalRecord]) -> int:
    for r in records:
        if r.kind == KIND_EXPERIMENT_CREATED:
            return r.t
    raise NoData("journal has no experiment")


def _marks(records: Sequence[JournalRecord]) -> list[tuple[int, Mapping[str, Any]]]:
    # last mark at an instant supersedes earlier ones (a stop can land on
    # the same second as the regular quantum mark)
    by_t: dict[int, Mapping[str, Any]] = {}
    for r in records:
        if r.kind == KIND_QUANTUM_MARK:
            by_t[r.t] = r.payload
    return sorted(by_t.items())


def timeseries_points(records: Sequence[JournalRecord],
                      interval: int = 60) -> list[dict[str, Any]]:
    """One point per (sampled instant, resource). Instants are quantum
    marks aligned to the interval; the final mark is always included."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    origin = _origin(records)
    points: list[dict[str, Any]] = []
    for t, mark in _marks(records):
        aligned = (t - origin) % interval == 0
        if not aligned and not mark.get("final"):
            continue
        for rid in sorted(mark.get("resources", {})):
            cell = mark["resources"][rid]
            points.append({
                "t": t,
                "t_min": minutes_str(t, origin),
                "resource": rid,
                "executing": int(cell["executing"]),
                "done_cum": int(cell["done_cum"]),
                "spent": int(cell["spent"]),
            })
    return points


CSV_HEADER = "t_min,resource,executing,done_cum,spent"


def render_csv(records: Sequence[JournalRecord], interval: int = 60) -> str:
    lines = [CSV_HEADER]
    for p in timeseries_points(records, interval):
        lines.append(f"{p['t_min']},{p['resource']},{p['executing']},"
                     f"{p['done_cum']},{p['spent']}")
    return "\n".join(lines) + "\n"


def summarize(records: Sequence[JournalRecord]) -> dict[str, Any]:
    """The run summary written next to the journal: total makespan in
    minutes, exact total cost, and done-job counts per resource."""
    if not records:
        raise NoData("empty journal")
    from .engine import fold_journal

    origin = _origin(records)
    state = fold_journal(records)
    end = state.terminal_t if state.terminal_t is not None else records[-1].t
    accounts = state.exp.accounts
    hundredths = ((end - origin) * 100 + 30) // 60
    return {
        "makespan_min": hundredths / 100,
        "total_cost": accounts.spent,
        "per_resource_jobs": {
            rid: ledger.jobs_done
            for rid, ledger in sorted(accounts.ledgers.items())
        },
    }


def final_phase(records: Sequence[JournalRecord]) -> Optional[ExperimentPhase]:
    phase = None
    for r in records:
        if r.kind == KIND_PHASE_CHANGED:
            phase = ExperimentPhase(r.payload["phase"])
    return phase
