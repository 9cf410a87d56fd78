"""Shared builders for the suite. Kept deliberately dumb: every helper is
a thin constructor call so a failing test reads without indirection."""

from __future__ import annotations

import json

from gridbroker.fabric import Resource
from gridbroker.model import QoSConstraints, Strategy
from gridbroker.plan import JobSpec
from gridbroker.scheduler import RateProfile
from gridbroker.trading import PriceModel, PricePolicy, quote


def posted(price: int) -> PricePolicy:
    return PricePolicy(model=PriceModel.POSTED_PRICE, base_price=price)


def resource(rid: str, nodes: int, price: int, speed: float = 1.0,
             **kw) -> Resource:
    return Resource(id=rid, organization="test", node_count=nodes,
                    speed_factor=speed, policy=posted(price), **kw)


def quoted_at(resources, now: int = 0, consumer: str = "default",
              ttl: int = 10**9):
    return [(r, quote(r, consumer, now, ttl=ttl)) for r in resources]


def measured(seconds: float) -> RateProfile:
    return RateProfile(measured=float(seconds), samples=1)


def testbed_text(entries) -> str:
    """entries: dicts passed through, or (id, nodes, price[, speed]) tuples."""
    docs = []
    for e in entries:
        if isinstance(e, dict):
            docs.append(e)
        else:
            rid, nodes, price = e[0], e[1], e[2]
            speed = e[3] if len(e) > 3 else 1.0
            docs.append({
                "id": rid, "organization": "test", "nodes": nodes,
                "speed": speed,
                "price": {"model": "posted_price", "base_price": price},
            })
    return json.dumps({"resources": docs})


def sweep_specs(n: int, nominal: int = 300, prefix: str = "j") -> list[JobSpec]:
    width = max(1, len(str(n)))
    return [JobSpec(id=f"{prefix}{i:0{width}d}", binding={"i": i},
                    command=f"run -i {i}", nominal_cpu_seconds=nominal)
            for i in range(1, n + 1)]


def make_qos(deadline_min: float = 120, budget: int = 396000,
             strategy: Strategy = Strategy.COST, **kw) -> QoSConstraints:
    return QoSConstraints(deadline_min=deadline_min, budget=budget,
                          strategy=strategy, **kw)
