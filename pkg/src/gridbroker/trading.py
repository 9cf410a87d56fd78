"""Resource trading: owner-side price quoting and broker-side negotiation.

Two pricing models. A commodity-market policy varies the price by time of
day (peak window) and by consumer; a posted price is a single published
figure. Prices are integer G$ per CPU-second and all factor arithmetic
rounds half-up, clamped to a minimum of 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Union

from .config import half_up
from .model import BrokerError


class ResourceUnavailable(BrokerError):
    pass


class PriceModel(str, Enum):
    COMMODITY_MARKET = "commodity_market"
    POSTED_PRICE = "posted_price"


class RejectionReason(str, Enum):
    TOO_EXPENSIVE = "too_expensive"
    QUOTE_EXPIRED = "quote_expired"


@dataclass(frozen=True)
class PeakWindow:
    """Daily interval in seconds-of-day, [start, end); wraps past midnight
    when start > end."""

    start_s: int
    end_s: int

    DAY = 86400

    def __post_init__(self) -> None:
        if not (0 <= self.start_s < self.DAY and 0 <= self.end_s <= self.DAY):
            raise ValueError("peak window bounds must lie within one day")

    def contains(self, now: int) -> bool:
        tod = now % self.DAY
        if self.start_s <= self.end_s:
            return self.start_s <= tod < self.end_s
        return tod >= self.start_s or tod < self.end_s


@dataclass(frozen=True)
class PricePolicy:
    model: PriceModel
    base_price: int
    peak_multiplier: float = 1.0
    peak_window: Optional[PeakWindow] = None
    consumer_factors: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.base_price <= 0:
            raise ValueError("base_price must be > 0")
        if self.peak_multiplier < 1:
            raise ValueError("peak_multiplier must be >= 1")
        if self.model is PriceModel.POSTED_PRICE:
            # a posted price is fixed: no peak and no per-consumer variation
            if self.peak_multiplier != 1.0 or self.consumer_factors:
                raise ValueError("posted price admits no multipliers")

    def price_at(self, consumer: str, now: int) -> int:
        factor = 1.0
        if self.peak_window is not None and self.peak_window.contains(now):
            factor *= self.peak_multiplier
        factor *= self.consumer_factors.get(consumer, 1.0)
        return max(1, half_up(self.base_price * factor))

    def as_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"model": self.model.value, "base_price": self.base_price}
        if self.peak_multiplier != 1.0:
            d["peak_multiplier"] = self.peak_multiplier
        if self.peak_window is not None:
            d["peak_window"] = [self.peak_window.start_s, self.peak_window.end_s]
        if self.consumer_factors:
            d["consumer_factors"] = dict(self.consumer_factors)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PricePolicy":
        window = None
        if d.get("peak_window"):
            start, end = d["peak_window"]
            window = PeakWindow(int(start), int(end))
        return cls(
            model=PriceModel(d.get("model", PriceModel.POSTED_PRICE.value)),
            base_price=int(d["base_price"]),
            peak_multiplier=float(d.get("peak_multiplier", 1.0)),
            peak_window=window,
            consumer_factors=dict(d.get("consumer_factors", {})),
        )


@dataclass(frozen=True)
class PriceQuote:
    resource: str
    price: int
    valid_from: int
    valid_until: int
    model: PriceModel

    def __post_init__(self) -> None:
        if self.price <= 0:
            raise ValueError("quoted price must be > 0")
        if self.valid_from >= self.valid_until:
            raise ValueError("quote validity window is empty")


@dataclass(frozen=True)
class Contract:
    resource: str
    price: int
    established_at: int


@dataclass(frozen=True)
class Rejection:
    resource: str
    reason: RejectionReason


@dataclass(frozen=True)
class TradeRequest:
    resource: str
    max_price: int


def quote(resource: Any, consumer: str, now: int, *, ttl: int = 300) -> PriceQuote:
    """Owner-side quote for one resource. ``resource`` needs ``id``,
    ``policy`` and an ``up`` flag (see the fabric's Resource)."""
    if not getattr(resource, "up", True):
        raise ResourceUnavailable(resource.id)
    policy: PricePolicy = resource.policy
    return PriceQuote(
        resource=resource.id,
        price=policy.price_at(consumer, now),
        valid_from=now,
        valid_until=now + ttl,
        model=policy.model,
    )


def negotiate(request: TradeRequest, offer: PriceQuote,
              now: int) -> Union[Contract, Rejection]:
    """Accept iff the quote is still valid and within the price cap.
    A rejection is a value, not an error."""
    if offer.resource != request.resource:
        raise ValueError(f"quote is for {offer.resource}, not {request.resource}")
    if not (offer.valid_from <= now < offer.valid_until):
        return Rejection(request.resource, RejectionReason.QUOTE_EXPIRED)
    if offer.price > request.max_price:
        return Rejection(request.resource, RejectionReason.TOO_EXPENSIVE)
    return Contract(request.resource, offer.price, now)
