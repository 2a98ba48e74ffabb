"""Per-minute reserve activation at minimal cost.

The balancing problem for one minute is a tiny MILP: meet the residual
imbalance with aFRR and mFRR bids, where mFRR in a direction may only be
used once the aFRR capacity in that direction is exhausted. Because the
only integrality (the saturation flag) is fully determined by the aFRR
fill level, the optimum is the merit-order greedy fill with mFRR gated on
aFRR saturation; ``dispatch_minute`` implements that specialization and
``dispatch_oracle`` cross-checks it with an LP solver on small instances.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import isfinite

import numpy as np
from scipy.optimize import linprog

from .market_data import Bid, BidLadder, Direction, Product


class InstanceTooLarge(ValueError):
    """The brute-force oracle only accepts small instances."""


@dataclass(frozen=True, slots=True)
class DispatchTarget:
    """Residual power to restore, ``-(SI + V_brp)``; > 0 means shortage."""

    required_mw: float

    def __post_init__(self) -> None:
        if not isfinite(self.required_mw):
            raise ValueError(f"dispatch target must be finite, got {self.required_mw}")


@dataclass(slots=True)
class DispatchResult:
    """Activated volumes and accounting for one minute.

    ``cost_per_minute`` is energy-priced: MW * (1/60) h * EUR/MWh, with
    downward activations entering negatively (the operator collects the
    decremental price). ``unserved`` is the positive shortfall magnitude
    when the target exceeds total directional capacity.
    """

    per_bid: dict[str, float]
    v_afrr_up: float = 0.0
    v_afrr_down: float = 0.0
    v_mfrr_up: float = 0.0
    v_mfrr_down: float = 0.0
    z_up: bool = False
    z_down: bool = False
    marginal_mfrr_up: float | None = None
    marginal_mfrr_down: float | None = None
    cost_per_minute: float = 0.0
    unserved: float = 0.0


def _empty_result() -> DispatchResult:
    return DispatchResult(per_bid={})


def dispatch_minute(target: DispatchTarget, ladder: BidLadder) -> DispatchResult:
    """Cost-minimal activation of the ladder against the target.

    Only the needed direction activates; aFRR fills strictly in merit
    order and mFRR is used only when the aFRR group is saturated. Capacity
    exhaustion is reported via ``unserved``, never raised.
    """
    required = target.required_mw
    if required == 0.0:
        return _empty_result()
    direction = Direction.UP if required > 0.0 else Direction.DOWN
    need = required if required > 0.0 else -required

    per_bid: dict[str, float] = {}
    value = 0.0  # sum of price * volume over activated bids
    remaining = need
    v_afrr = 0.0
    for bid in ladder.bids(Product.AFRR, direction):
        if remaining <= 0.0:
            break
        take = bid.capacity if remaining >= bid.capacity else remaining
        per_bid[bid.bid_id] = take
        value += bid.price * take
        v_afrr += take
        remaining -= take

    # Saturation flag: exact because both sides accumulate the same bid
    # capacities in the same order.
    saturated = v_afrr == ladder.cap(Product.AFRR, direction)

    v_mfrr = 0.0
    marginal: float | None = None
    if saturated and remaining > 0.0:
        for bid in ladder.bids(Product.MFRR, direction):
            if remaining <= 0.0:
                break
            take = bid.capacity if remaining >= bid.capacity else remaining
            per_bid[bid.bid_id] = take
            value += bid.price * take
            v_mfrr += take
            marginal = bid.price
            remaining -= take

    result = _empty_result()
    result.per_bid = per_bid
    result.unserved = remaining
    if direction is Direction.UP:
        result.v_afrr_up = v_afrr
        result.v_mfrr_up = v_mfrr
        result.z_up = saturated
        result.marginal_mfrr_up = marginal
        result.cost_per_minute = value / 60.0
    else:
        result.v_afrr_down = v_afrr
        result.v_mfrr_down = v_mfrr
        result.z_down = saturated
        result.marginal_mfrr_down = marginal
        result.cost_per_minute = -value / 60.0
    return result


def _lp_fill(bids: tuple[Bid, ...], volume: float, direction: Direction):
    """Min-cost continuous fill of ``volume`` over ``bids`` via linprog.

    Returns (per-bid volumes, price-weighted value) or None if infeasible.
    Downward fills maximize the collected decremental price.
    """
    if volume < 0.0:
        return None
    if not bids:
        return ({}, 0.0) if volume <= 1e-9 else None
    prices = np.array([b.price for b in bids])
    sign = 1.0 if direction is Direction.UP else -1.0
    res = linprog(
        sign * prices,
        A_eq=np.ones((1, len(bids))),
        b_eq=[volume],
        bounds=[(0.0, b.capacity) for b in bids],
        method="highs",
    )
    if not res.success:
        return None
    volumes = {b.bid_id: x for b, x in zip(bids, res.x) if x > 1e-12}
    return volumes, float(prices @ res.x)


def dispatch_oracle(target: DispatchTarget, ladder: BidLadder) -> DispatchResult:
    """Reference solution by saturation-flag enumeration plus LP fills.

    Enumerates both values of the relevant saturation flag, solves each
    branch as a continuous LP and keeps the cheaper feasible one. Only
    meant for verification on instances with at most 12 bids.
    """
    if len(ladder.all_bids()) > 12:
        raise InstanceTooLarge(f"oracle limited to 12 bids, got {len(ladder.all_bids())}")
    required = target.required_mw
    if required == 0.0:
        return _empty_result()
    direction = Direction.UP if required > 0.0 else Direction.DOWN
    need = abs(required)
    afrr = ladder.bids(Product.AFRR, direction)
    mfrr = ladder.bids(Product.MFRR, direction)
    afrr_cap = ladder.cap(Product.AFRR, direction)
    mfrr_cap = ladder.cap(Product.MFRR, direction)

    candidates = []
    # Unsaturated branch: aFRR alone carries the full target.
    if need <= afrr_cap:
        fill = _lp_fill(afrr, need, direction)
        if fill is not None:
            candidates.append((fill[1], fill[0], {}))
    # Saturated branch: aFRR pinned at its cap, mFRR carries the rest.
    if need >= afrr_cap:
        rest = _lp_fill(mfrr, min(need - afrr_cap, mfrr_cap), direction)
        if rest is not None:
            afrr_full = {b.bid_id: b.capacity for b in afrr}
            afrr_value = sum(b.price * b.capacity for b in afrr)
            candidates.append((afrr_value + rest[1], afrr_full, rest[0]))

    # At least one branch is always feasible: the saturated branch clamps
    # the mFRR fill at its cap and reports the excess as unserved.
    value, afrr_vol, mfrr_vol = min(candidates, key=lambda c: c[0])
    v_afrr = sum(afrr_vol.values())
    v_mfrr = sum(mfrr_vol.values())
    marginal = None
    if mfrr_vol:
        activated = [b.price for b in mfrr if b.bid_id in mfrr_vol]
        marginal = max(activated) if direction is Direction.UP else min(activated)

    result = _empty_result()
    result.per_bid = {**afrr_vol, **mfrr_vol}
    result.unserved = max(0.0, need - afrr_cap - mfrr_cap)
    saturated = v_afrr >= afrr_cap - 1e-9
    if direction is Direction.UP:
        result.v_afrr_up = v_afrr
        result.v_mfrr_up = v_mfrr
        result.z_up = saturated
        result.marginal_mfrr_up = marginal
        result.cost_per_minute = value / 60.0
    else:
        result.v_afrr_down = v_afrr
        result.v_mfrr_down = v_mfrr
        result.z_down = saturated
        result.marginal_mfrr_down = marginal
        result.cost_per_minute = -value / 60.0
    return result
