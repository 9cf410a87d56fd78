"""Broker-wide tunables, journaled with each experiment so a resumed run
sees the same constants it started with."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Any


@dataclass(frozen=True)
class BrokerConfig:
    quantum_s: int = 60                  # scheduling/dispatch period (virtual seconds)
    smoothing_alpha: float = 0.3         # rate-profile exponential smoothing
    quote_ttl_s: int = 300               # price quote validity window
    stage_delay_s: int = 5               # simulated stage-in per job (0 = pure-scheduling tests)
    retry_limit: int = 3                 # task errors tolerated per job before it stays Failed
    default_estimate_s: int = 300        # optimistic per-job seconds before any measurement
    calibration_jobs_per_resource: int = 1
    load_min: float = 0.0                # background load factor range on shared resources
    load_max: float = 0.25
    task_error_prob: float = 0.0         # fault-injection knob
    lost_work_charge: int = 0            # G$ charged per attempt open at crash time
    nominal_cpu_seconds: int = 300       # simulated true size of each job
    nominal_jitter: float = 0.0          # +- fraction applied per job to the nominal size
    consumer: str = "default"            # consumer identity presented to resource traders
    fsync: bool = False                  # fsync the journal on every append

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BrokerConfig":
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        return cls(**known)


def half_up(x: float) -> int:
    """Round half away from zero for non-negative quantities.

    Used everywhere a fractional duration or price factor must become an
    exact integer (G$ arithmetic is integer-only).
    """
    if x < 0:
        raise ValueError("half_up is defined for non-negative values")
    return int(x + 0.5)
