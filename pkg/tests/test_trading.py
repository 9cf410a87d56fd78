"""Owner-side quoting and broker-side negotiation."""

import pytest

from gridbroker.trading import (
    Contract, PeakWindow, PriceModel, PricePolicy, PriceQuote, Rejection,
    RejectionReason, ResourceUnavailable, TradeRequest, negotiate, quote,
)
from helpers import resource


def test_posted_price_is_flat():
    p = PricePolicy(model=PriceModel.POSTED_PRICE, base_price=7)
    assert p.price_at("anyone", 0) == 7
    assert p.price_at("anyone", 86400 * 3 + 5) == 7


def test_posted_price_admits_no_multipliers():
    with pytest.raises(ValueError):
        PricePolicy(model=PriceModel.POSTED_PRICE, base_price=7,
                    peak_multiplier=2.0)
    with pytest.raises(ValueError):
        PricePolicy(model=PriceModel.POSTED_PRICE, base_price=7,
                    consumer_factors={"u": 0.5})


def test_commodity_price_varies_by_peak_and_consumer():
    p = PricePolicy(
        model=PriceModel.COMMODITY_MARKET, base_price=4,
        peak_multiplier=1.5, peak_window=PeakWindow(9 * 3600, 17 * 3600),
        consumer_factors={"bulk": 0.5})
    assert p.price_at("x", 8 * 3600) == 4          # off peak
    assert p.price_at("x", 12 * 3600) == 6         # peak
    assert p.price_at("bulk", 12 * 3600) == 3      # peak, discounted
    assert p.price_at("bulk", 0) == 2
    # rounding is half-up and the floor is 1 G$
    tiny = PricePolicy(model=PriceModel.COMMODITY_MARKET, base_price=1,
                       consumer_factors={"bulk": 0.2})
    assert tiny.price_at("bulk", 0) == 1


def test_peak_window_wraps_midnight():
    w = PeakWindow(22 * 3600, 2 * 3600)
    assert w.contains(23 * 3600)
    assert w.contains(1 * 3600)
    assert not w.contains(12 * 3600)


def test_policy_round_trips_through_dict():
    p = PricePolicy(
        model=PriceModel.COMMODITY_MARKET, base_price=4, peak_multiplier=2.0,
        peak_window=PeakWindow(0, 3600), consumer_factors={"u": 1.5})
    assert PricePolicy.from_dict(p.as_dict()) == p


def test_quote_carries_validity_window():
    r = resource("r1", 4, 5)
    q = quote(r, "default", now=100, ttl=300)
    assert q == PriceQuote(resource="r1", price=5, valid_from=100,
                           valid_until=400, model=PriceModel.POSTED_PRICE)


def test_down_resource_refuses_to_quote():
    r = resource("r1", 4, 5)
    r.up = False
    with pytest.raises(ResourceUnavailable):
        quote(r, "default", now=0)


def test_negotiate_accepts_within_cap():
    q = PriceQuote("r1", 5, 0, 300, PriceModel.POSTED_PRICE)
    deal = negotiate(TradeRequest("r1", max_price=5), q, now=10)
    assert deal == Contract("r1", 5, 10)


def test_negotiate_rejections_are_values():
    q = PriceQuote("r1", 5, 0, 300, PriceModel.POSTED_PRICE)
    over = negotiate(TradeRequest("r1", max_price=4), q, now=10)
    assert isinstance(over, Rejection)
    assert over.reason is RejectionReason.TOO_EXPENSIVE
    stale = negotiate(TradeRequest("r1", max_price=9), q, now=300)
    assert isinstance(stale, Rejection)
    assert stale.reason is RejectionReason.QUOTE_EXPIRED


def test_negotiate_rejects_mismatched_resource():
    q = PriceQuote("r1", 5, 0, 300, PriceModel.POSTED_PRICE)
    with pytest.raises(ValueError):
        negotiate(TradeRequest("r2", max_price=9), q, now=10)


def test_quote_validity_window_must_be_nonempty():
    with pytest.raises(ValueError):
        PriceQuote("r1", 5, 10, 10, PriceModel.POSTED_PRICE)
    with pytest.raises(ValueError):
        PriceQuote("r1", 0, 0, 10, PriceModel.POSTED_PRICE)
