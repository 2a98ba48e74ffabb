"""Imbalance-price formation over an imbalance settlement period.

State accumulates per minute (cumulative-average imbalance, aFRR value
and volume sums, running mFRR marginal extrema, value of additional
activation) and feeds three price formulas: the currently adopted
max/min formula with a fixed deadband ("current"), the max/min formula
with a smoothed deadband ("mmsd"), and the volume-weighted average of
the aFRR and mFRR components ("wadw"). All three receive the same alpha
correction for extreme imbalances.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import exp
from typing import Union

import numpy as np

from .dispatch import DispatchResult
from .market_data import BidLadder, Direction, Product

DEADBAND_MW = 25.0
EXTREME_MW = 150.0

# Alpha sigmoid: gain / (1 + e^((center - x) / scale)), zero offset.
ALPHA_GAIN = 200.0
ALPHA_CENTER = 450.0
ALPHA_SCALE = 65.0
ALPHA_HIGH_ANCHOR = 400.0  # upward correction fades out at this price
ALPHA_LOW_ANCHOR = -200.0  # downward correction fades out at this price


class IspFull(ValueError):
    """Accumulator already holds 15 minutes."""


class IspIncomplete(ValueError):
    """Settlement requested before the ISP has 15 minutes."""


class NoBidsAvailable(ValueError):
    """No bid prices available to anchor the spot component."""


class FormulaKind(Enum):
    CURRENT = "current"
    MMSD = "mmsd"
    WADW = "wadw"


@dataclass(frozen=True, slots=True)
class IspAccumulator:
    """Clearing information of one ISP accumulated up to the current minute.

    aFRR sums add both directions (the component is a weighted average of
    all aFRR activations); the literal per-minute ratio sums are kept in
    parallel so the alternative reading of the component definitions can
    be switched on for comparison.
    """

    minute_count: int = 0
    si_sum: float = 0.0
    afrr_value_sum: float = 0.0  # EUR/MWh * MW, both directions
    afrr_volume_sum: float = 0.0  # MW, both directions
    afrr_ratio_sum: float = 0.0  # sum over minutes of per-minute value/volume
    total_volume_sum: float = 0.0  # MW over all products and directions
    wadw_ratio_sum: float = 0.0  # sum over minutes of per-minute aFRR share
    mfrr_up_max: float | None = None
    mfrr_down_min: float | None = None
    voaa_up: float | None = None
    voaa_down: float | None = None
    prev_isp_si_avg: float = 0.0

    @property
    def si_cum_avg(self) -> float:
        return self.si_sum / self.minute_count if self.minute_count else 0.0


@dataclass(frozen=True, slots=True)
class PriceComponents:
    """The three price components; ``lambda_mfrr`` is absent without
    mFRR activations in the branch selected by the imbalance sign."""

    lambda_afrr: float
    lambda_mfrr: float | None
    lambda_spot: float
    alpha: float = 0.0


def update_accumulator(
    acc: IspAccumulator,
    si_t: float,
    result: DispatchResult,
    ladder: BidLadder,
) -> IspAccumulator:
    """Fold one minute of clearing information into the accumulator.

    ``si_t`` is the observed system imbalance of the minute (net of any
    simulated response). Raises :class:`IspFull` past minute 15.
    """
    if acc.minute_count >= 15:
        raise IspFull("accumulator already holds a full ISP")

    afrr_value = 0.0
    afrr_volume = 0.0
    total_volume = 0.0
    bids_by_id = ladder.bids_by_id
    for bid_id, volume in result.per_bid.items():
        total_volume += volume
        bid = bids_by_id[bid_id]
        if bid.product is Product.AFRR:
            afrr_value += bid.price * volume
            afrr_volume += volume

    mfrr_up_max = acc.mfrr_up_max
    price_up = result.marginal_mfrr_up
    if price_up is not None:
        mfrr_up_max = price_up if mfrr_up_max is None else max(mfrr_up_max, price_up)
    mfrr_down_min = acc.mfrr_down_min
    price_down = result.marginal_mfrr_down
    if price_down is not None:
        mfrr_down_min = (
            price_down if mfrr_down_min is None else min(mfrr_down_min, price_down)
        )

    return IspAccumulator(
        minute_count=acc.minute_count + 1,
        si_sum=acc.si_sum + si_t,
        afrr_value_sum=acc.afrr_value_sum + afrr_value,
        afrr_volume_sum=acc.afrr_volume_sum + afrr_volume,
        afrr_ratio_sum=acc.afrr_ratio_sum
        + (afrr_value / afrr_volume if afrr_volume > 0.0 else 0.0),
        total_volume_sum=acc.total_volume_sum + total_volume,
        wadw_ratio_sum=acc.wadw_ratio_sum
        + (afrr_volume / total_volume if total_volume > 0.0 else 0.0),
        mfrr_up_max=mfrr_up_max,
        mfrr_down_min=mfrr_down_min,
        voaa_up=ladder.value_of_additional_activation(Direction.UP),
        voaa_down=ladder.value_of_additional_activation(Direction.DOWN),
        prev_isp_si_avg=acc.prev_isp_si_avg,
    )


def compute_components(
    acc: IspAccumulator, *, ratio_of_sums: bool = True
) -> PriceComponents:
    """Evaluate the aFRR, mFRR and spot components at the current minute.

    Without aFRR activations the aFRR component equals the spot component
    (the average of the upward and downward value of additional
    activation). The mFRR component is the running marginal extreme of
    the direction selected by the sign of the cumulative-average
    imbalance, absent when nothing was activated there.
    """
    if acc.voaa_up is None or acc.voaa_down is None:
        raise NoBidsAvailable("need bids in both directions for the spot component")
    lambda_spot = 0.5 * (acc.voaa_up + acc.voaa_down)
    if acc.afrr_volume_sum > 0.0:
        if ratio_of_sums:
            lambda_afrr = acc.afrr_value_sum / acc.afrr_volume_sum
        else:
            lambda_afrr = acc.afrr_ratio_sum
    else:
        lambda_afrr = lambda_spot
    lambda_mfrr = acc.mfrr_up_max if acc.si_cum_avg <= 0.0 else acc.mfrr_down_min
    return PriceComponents(lambda_afrr, lambda_mfrr, lambda_spot, 0.0)


def compute_alpha(
    lambda_b: float, si_cum_avg: float, prev_isp_si_avg: float
) -> float:
    """Price correction for extreme imbalances (|SI| above 150 MW).

    A sigmoid of the two-ISP average imbalance magnitude, scaled by a
    clipped distance of the price from an anchor: pushes low prices up
    during large shortages and high prices down during large surpluses.
    Identically zero while the cumulative-average imbalance stays inside
    [-150, 150] MW.
    """
    if -EXTREME_MW <= si_cum_avg <= EXTREME_MW:
        return 0.0
    x = abs(0.5 * (si_cum_avg + prev_isp_si_avg))
    sigmoid = ALPHA_GAIN / (1.0 + exp((ALPHA_CENTER - x) / ALPHA_SCALE))
    if si_cum_avg < -EXTREME_MW:
        cp = min(1.0, max(0.0, (ALPHA_HIGH_ANCHOR - lambda_b) / 200.0))
    else:
        cp = -min(1.0, max(0.0, (lambda_b - ALPHA_LOW_ANCHOR) / 200.0))
    return sigmoid * cp


def _wadw_weight(acc: IspAccumulator, ratio_of_sums: bool) -> float:
    if acc.total_volume_sum <= 0.0:
        return 1.0
    if ratio_of_sums:
        return acc.afrr_volume_sum / acc.total_volume_sum
    return acc.wadw_ratio_sum


def _formula_value(
    kind: FormulaKind,
    afrr: float,
    mfrr: float | None,
    spot: float,
    si: float,
    w_afrr: float,
) -> float:
    if kind is FormulaKind.CURRENT:
        if -DEADBAND_MW <= si <= DEADBAND_MW:
            return spot
        if mfrr is None:
            return afrr
        return max(afrr, mfrr) if si < -DEADBAND_MW else min(afrr, mfrr)
    if kind is FormulaKind.MMSD:
        w_spot = exp(-((si / DEADBAND_MW) ** 4))
        if mfrr is None:
            frr = afrr
        else:
            frr = max(afrr, mfrr) if si <= 0.0 else min(afrr, mfrr)
        return w_spot * spot + (1.0 - w_spot) * frr
    if kind is FormulaKind.WADW:
        if mfrr is None:
            return afrr
        return w_afrr * afrr + (1.0 - w_afrr) * mfrr
    raise ValueError(f"unknown formula {kind!r}")


def price_before_alpha(
    formula: FormulaKind,
    comps: PriceComponents,
    acc: IspAccumulator,
    *,
    ratio_of_sums: bool = True,
) -> float:
    """Intermediate price of the bare formula, before the alpha correction."""
    return _formula_value(
        formula,
        comps.lambda_afrr,
        comps.lambda_mfrr,
        comps.lambda_spot,
        acc.si_cum_avg,
        _wadw_weight(acc, ratio_of_sums),
    )


def price(
    formula: FormulaKind,
    comps: PriceComponents,
    acc: IspAccumulator,
    *,
    ratio_of_sums: bool = True,
) -> float:
    """Intermediate imbalance price at the accumulator's current minute."""
    base = price_before_alpha(formula, comps, acc, ratio_of_sums=ratio_of_sums)
    return base + compute_alpha(base, acc.si_cum_avg, acc.prev_isp_si_avg)


def settlement_price(
    formula: FormulaKind, acc: IspAccumulator, *, ratio_of_sums: bool = True
) -> float:
    """Settlement price of a completed ISP (equals the minute-15 price)."""
    if acc.minute_count != 15:
        raise IspIncomplete(f"ISP has {acc.minute_count} minutes, need 15")
    comps = compute_components(acc, ratio_of_sums=ratio_of_sums)
    return price(formula, comps, acc, ratio_of_sums=ratio_of_sums)


ArrayLike = Union[float, np.ndarray]


def price_curve(
    formula: FormulaKind,
    comps: PriceComponents,
    si: ArrayLike,
    *,
    prev_isp_si_avg: float = 0.0,
    w_afrr: float = 1.0,
    include_alpha: bool = True,
) -> np.ndarray:
    """Vectorized price as a function of the cumulative-average imbalance.

    Component values and the WADW weight are held fixed while ``si``
    varies; used for the formula-shape property checks. Matches the
    scalar path exactly (there is a test pinning the equivalence).
    """
    si = np.asarray(si, dtype=np.float64)
    afrr, mfrr, spot = comps.lambda_afrr, comps.lambda_mfrr, comps.lambda_spot
    if formula is FormulaKind.CURRENT:
        hi = afrr if mfrr is None else max(afrr, mfrr)
        lo = afrr if mfrr is None else min(afrr, mfrr)
        base = np.where(
            np.abs(si) <= DEADBAND_MW, spot, np.where(si < -DEADBAND_MW, hi, lo)
        )
    elif formula is FormulaKind.MMSD:
        w_spot = np.exp(-((si / DEADBAND_MW) ** 4))
        hi = afrr if mfrr is None else max(afrr, mfrr)
        lo = afrr if mfrr is None else min(afrr, mfrr)
        frr = np.where(si <= 0.0, hi, lo)
        base = w_spot * spot + (1.0 - w_spot) * frr
    elif formula is FormulaKind.WADW:
        value = afrr if mfrr is None else w_afrr * afrr + (1.0 - w_afrr) * mfrr
        base = np.full_like(si, value)
    else:
        raise ValueError(f"unknown formula {formula!r}")
    if not include_alpha:
        return base
    x = np.abs(0.5 * (si + prev_isp_si_avg))
    sigmoid = ALPHA_GAIN / (1.0 + np.exp((ALPHA_CENTER - x) / ALPHA_SCALE))
    cp = np.where(
        si < -EXTREME_MW,
        np.clip((ALPHA_HIGH_ANCHOR - base) / 200.0, 0.0, 1.0),
        np.where(
            si > EXTREME_MW,
            -np.clip((base - ALPHA_LOW_ANCHOR) / 200.0, 0.0, 1.0),
            0.0,
        ),
    )
    return base + sigmoid * cp
