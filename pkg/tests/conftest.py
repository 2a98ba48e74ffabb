from datetime import datetime, timezone

import pytest

from balansim.market_data import Bid, BidLadder, Direction, Product

T0 = datetime(2023, 1, 1, tzinfo=timezone.utc)

_PREFIXES = (
    ("aU", Product.AFRR, Direction.UP),
    ("aD", Product.AFRR, Direction.DOWN),
    ("mU", Product.MFRR, Direction.UP),
    ("mD", Product.MFRR, Direction.DOWN),
)


def make_ladder(au=(), ad=(), mu=(), md=(), window_start=T0, window_end=None):
    """Build a ladder from (price, capacity) steps per group."""
    steps_by_prefix = {"aU": au, "aD": ad, "mU": mu, "mD": md}
    bids = []
    for prefix, product, direction in _PREFIXES:
        for i, (price, cap) in enumerate(steps_by_prefix[prefix]):
            bids.append(Bid(f"{prefix}{i}", product, direction, float(price), float(cap)))
    return BidLadder.from_bids(window_start, window_end, bids)


@pytest.fixture
def basic_ladder():
    return make_ladder(
        au=((50, 60), (80, 80)),
        ad=((40, 50), (10, 50)),
        mu=((120, 100),),
        md=((-60, 100),),
    )
