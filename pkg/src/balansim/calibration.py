"""Threshold calibration by grid search over a risk/return trade-off.

Candidate threshold pairs are replayed against a historical 1-minute
price series with a unit battery; each pair yields daily profit samples.
The selected pair minimizes ``w * risk - (1 - w) * mean`` after min-max
normalizing both terms across candidates, where the risk term is the
expected shortfall of the daily profits at the 5% level (negated tail
mean, so large tail losses give a large risk value).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from statistics import fmean
from typing import Sequence

import numpy as np

from .fleet import BessAsset, RiskGroup, _apply_setpoint, asset_setpoint
from .market_data import MINUTES_PER_DAY, MINUTES_PER_ISP


class EmptySeries(ValueError):
    """Replay requested on an empty price series."""


class TooFewSamples(ValueError):
    """Not enough profit samples to take a tail mean."""


class DegenerateGridWarning(UserWarning):
    """All candidate pairs score identically; the selection is arbitrary."""


@dataclass(frozen=True, slots=True)
class ProfitSample:
    """Gross profit of one calendar day under a candidate threshold pair."""

    day: date
    profit_eur: float


@dataclass(frozen=True)
class CalibrationGrid:
    """Candidate thresholds and the risk weight of the group."""

    upper_candidates: tuple[float, ...]
    lower_candidates: tuple[float, ...]
    w: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"risk weight must be in [0, 1], got {self.w}")

    def pairs(self) -> list[tuple[float, float]]:
        return [
            (upper, lower)
            for upper in self.upper_candidates
            for lower in self.lower_candidates
            if upper >= lower
        ]


def default_grid(w: float, step: float = 25.0) -> CalibrationGrid:
    """Candidates every ``step`` EUR/MWh over [-200, 600] for both thresholds."""
    candidates = tuple(np.arange(-200.0, 600.0 + 0.5 * step, step))
    return CalibrationGrid(candidates, candidates, w)


def _fresh_asset(asset: BessAsset, upper: float, lower: float) -> BessAsset:
    return BessAsset(
        power_max_discharge=asset.power_max_discharge,
        power_max_charge=asset.power_max_charge,
        energy_capacity=asset.energy_capacity,
        soc=asset.soc,
        cycle_budget_remaining=asset.cycle_budget_remaining,
        upper_threshold=upper,
        lower_threshold=lower,
        risk_group=asset.risk_group,
        round_trip_efficiency=asset.round_trip_efficiency,
    )


def replay_profit(
    prices: Sequence[float],
    upper: float,
    lower: float,
    asset: BessAsset,
    *,
    start_day: date = date(2022, 1, 1),
    valuation: str = "minute",
) -> list[ProfitSample]:
    """Replay bang-bang control on a price series, one sample per day.

    Trades are valued at the minute price itself by default; with
    ``valuation="settlement"`` every minute is valued at the last price
    of its ISP instead (requires a whole number of ISPs). The cycle
    budget resets at each midnight; the state of charge carries over.
    """
    n = len(prices)
    if n == 0:
        raise EmptySeries("price series is empty")
    trigger = np.asarray(prices, dtype=np.float64)
    if valuation == "minute":
        value = trigger
    elif valuation == "settlement":
        if n % MINUTES_PER_ISP:
            raise ValueError("settlement valuation needs a whole number of ISPs")
        value = np.repeat(trigger[MINUTES_PER_ISP - 1 :: MINUTES_PER_ISP], MINUTES_PER_ISP)
    else:
        raise ValueError(f"unknown valuation {valuation!r}")

    replayed = _fresh_asset(asset, upper, lower)
    budget = asset.cycle_budget_remaining
    trigger_list = trigger.tolist()
    value_list = value.tolist()

    samples: list[ProfitSample] = []
    cash = 0.0
    day_index = 0
    for t in range(n):
        if t and t % MINUTES_PER_DAY == 0:
            samples.append(ProfitSample(start_day + timedelta(days=day_index), cash))
            cash = 0.0
            day_index += 1
            replayed.cycle_budget_remaining = budget
        setpoint = asset_setpoint(replayed, trigger_list[t])
        if setpoint != 0.0:
            _apply_setpoint(replayed, setpoint)
            cash += setpoint * value_list[t] / 60.0
    samples.append(ProfitSample(start_day + timedelta(days=day_index), cash))
    return samples


def cvar(samples: Sequence[ProfitSample | float], level: float = 0.05) -> float:
    """Expected shortfall of profit samples: negated mean of the worst tail.

    Uses the worst ``ceil(n * level)`` samples (at least one), so small
    sample counts degrade to the single worst day. Statistically stable
    tails need on the order of ``1 / level`` samples or more.
    """
    if not 0.0 < level <= 1.0:
        raise ValueError(f"level must be in (0, 1], got {level}")
    values = [s.profit_eur if isinstance(s, ProfitSample) else float(s) for s in samples]
    if not values:
        raise TooFewSamples("need at least one profit sample")
    k = max(1, math.ceil(len(values) * level))
    worst = sorted(values)[:k]
    return -fmean(worst)


def _normalize(values: Sequence[float]) -> list[float]:
    lo, hi = min(values), max(values)
    span = hi - lo
    if span == 0.0:
        return [0.0] * len(values)
    return [(v - lo) / span for v in values]


def select_thresholds(
    candidates: Sequence[tuple[float, float]],
    means: Sequence[float],
    risks: Sequence[float],
    w: float,
) -> tuple[float, float]:
    """Pick the candidate minimizing ``w * risk_n - (1 - w) * mean_n``.

    Both vectors are min-max normalized across candidates first. Ties go
    to the wider threshold band (the more conservative pair).
    """
    if not candidates:
        raise ValueError("no candidate threshold pairs")
    if not len(candidates) == len(means) == len(risks):
        raise ValueError("candidates, means and risks must align")
    mean_n = _normalize(means)
    risk_n = _normalize(risks)
    objective = [w * r - (1.0 - w) * m for m, r in zip(mean_n, risk_n)]
    if max(objective) == min(objective) and len(candidates) > 1:
        warnings.warn(
            "all candidate pairs score identically", DegenerateGridWarning, stacklevel=2
        )
    order = sorted(
        range(len(candidates)),
        key=lambda i: (
            objective[i],
            -(candidates[i][0] - candidates[i][1]),
            candidates[i][0],
            candidates[i][1],
        ),
    )
    return candidates[order[0]]


def evaluate_grid(
    pairs: Sequence[tuple[float, float]],
    prices: Sequence[float],
    asset: BessAsset,
    *,
    level: float = 0.05,
    valuation: str = "minute",
    tail_convention: str = "shortfall",
) -> tuple[list[float], list[float]]:
    """Mean daily profit and risk of every candidate pair on the series.

    The replay table does not depend on the risk weight, so it can be
    shared between groups that only differ in ``w``.
    """
    if tail_convention not in ("shortfall", "literal"):
        raise ValueError(f"unknown tail convention {tail_convention!r}")
    means: list[float] = []
    risks: list[float] = []
    for upper, lower in pairs:
        samples = replay_profit(prices, upper, lower, asset, valuation=valuation)
        profits = [s.profit_eur for s in samples]
        means.append(fmean(profits))
        shortfall = cvar(profits, level)
        risks.append(shortfall if tail_convention == "shortfall" else -shortfall)
    return means, risks


def calibrate(
    grid: CalibrationGrid,
    prices: Sequence[float],
    asset: BessAsset,
    *,
    level: float = 0.05,
    valuation: str = "minute",
    tail_convention: str = "shortfall",
) -> tuple[float, float]:
    """Grid-search the threshold pair for one risk group.

    ``tail_convention="literal"`` scores candidates with the raw tail
    mean of profits instead of the expected shortfall, for sensitivity
    checks of the sign convention.
    """
    pairs = grid.pairs()
    if not pairs:
        raise ValueError("grid has no candidate with upper >= lower")
    means, risks = evaluate_grid(
        pairs,
        prices,
        asset,
        level=level,
        valuation=valuation,
        tail_convention=tail_convention,
    )
    return select_thresholds(pairs, means, risks, grid.w)


THRESHOLDS_CSV_HEADER = ("risk_group", "upper_eur_mwh", "lower_eur_mwh", "mean_profit", "cvar")


def save_thresholds_csv(
    path: str | Path,
    rows: dict[RiskGroup, tuple[float, float, float, float]],
) -> None:
    """Write per-group calibration results (upper, lower, mean, cvar)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(THRESHOLDS_CSV_HEADER)
        for group in RiskGroup:
            if group in rows:
                upper, lower, mean, risk = rows[group]
                writer.writerow(
                    [group.value, repr(upper), repr(lower), repr(mean), repr(risk)]
                )


def load_thresholds_csv(path: str | Path) -> dict[RiskGroup, tuple[float, float]]:
    """Read calibrated thresholds back as ``{group: (upper, lower)}``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    thresholds: dict[RiskGroup, tuple[float, float]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r and not r[0].lstrip().startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != list(THRESHOLDS_CSV_HEADER):
        raise ValueError(f"{path}: expected header {','.join(THRESHOLDS_CSV_HEADER)}")
    for row in rows[1:]:
        group = RiskGroup(row[0].strip())
        thresholds[group] = (float(row[1]), float(row[2]))
    return thresholds


PRICE_CSV_HEADER = ("timestamp", "price_eur_mwh")


def load_price_csv(path: str | Path) -> np.ndarray:
    """Load a 1-minute price series (``timestamp,price_eur_mwh``)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r and not r[0].lstrip().startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != list(PRICE_CSV_HEADER):
        raise ValueError(f"{path}: expected header {','.join(PRICE_CSV_HEADER)}")
    return np.array([float(row[1]) for row in rows[1:]])
