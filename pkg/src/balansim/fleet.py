"""Implicit response of battery assets to published imbalance prices.

Assets run two-threshold bang-bang control: full discharge above the
upper threshold, full charge below the lower one, idle in between, with
state-of-charge and daily cycle-budget limits clipping the power.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping


class InvalidSplit(ValueError):
    """Risk-group fractions malformed (negative or not summing to 1)."""


class ThresholdsMissing(ValueError):
    """A risk group with capacity has no calibrated thresholds."""


class RiskGroup(Enum):
    RISK_NEUTRAL = "risk_neutral"
    MEDIUM = "medium"
    RISK_AVERSE = "risk_averse"


RISK_GROUP_ORDER = (RiskGroup.RISK_NEUTRAL, RiskGroup.MEDIUM, RiskGroup.RISK_AVERSE)


@dataclass(slots=True)
class BessAsset:
    """One battery with bang-bang thresholds and per-day cycle budget.

    Round-trip losses are applied on charge: charging at grid power P for
    one minute stores P * efficiency / 60 MWh; discharging drains the
    state of charge one-for-one. The cycle budget counts grid-side
    throughput against twice the energy capacity.
    """

    power_max_discharge: float  # MW
    power_max_charge: float  # MW, stored positive
    energy_capacity: float  # MWh
    soc: float  # MWh
    cycle_budget_remaining: float  # cycles
    upper_threshold: float  # EUR/MWh, discharge above
    lower_threshold: float  # EUR/MWh, charge below
    risk_group: RiskGroup
    round_trip_efficiency: float = 1.0
    # bookkeeping for audits, not part of the control state
    soc_initial: float = field(default=0.0)
    charged_mwh: float = field(default=0.0)  # stored side
    discharged_mwh: float = field(default=0.0)
    min_soc_seen: float = field(default=0.0)
    max_soc_seen: float = field(default=0.0)
    min_budget_seen: float = field(default=0.0)

    def __post_init__(self) -> None:
        if self.upper_threshold < self.lower_threshold:
            raise ValueError("upper threshold must be >= lower threshold")
        if not 0.0 < self.round_trip_efficiency <= 1.0:
            raise ValueError("round-trip efficiency must be in (0, 1]")
        if not 0.0 <= self.soc <= self.energy_capacity:
            raise ValueError("initial SoC outside [0, capacity]")
        self.soc_initial = self.soc
        self.min_soc_seen = self.soc
        self.max_soc_seen = self.soc
        self.min_budget_seen = self.cycle_budget_remaining


def asset_setpoint(asset: BessAsset, last_published_price: float | None) -> float:
    """Power the asset runs this minute, positive = injection into the grid.

    The bang-bang target is clipped to what the state of charge, the
    remaining cycle budget and the one-minute energy step allow. No price
    published yet means idle.
    """
    if last_published_price is None:
        return 0.0
    capacity2 = 2.0 * asset.energy_capacity
    if last_published_price > asset.upper_threshold:
        limit = asset.power_max_discharge
        soc_limit = max(0.0, asset.soc) * 60.0
        budget_limit = max(0.0, asset.cycle_budget_remaining) * capacity2 * 60.0
        setpoint = min(limit, soc_limit, budget_limit)
        return setpoint if setpoint > 0.0 else 0.0
    if last_published_price < asset.lower_threshold:
        headroom = max(0.0, asset.energy_capacity - asset.soc)
        soc_limit = headroom * 60.0 / asset.round_trip_efficiency
        budget_limit = max(0.0, asset.cycle_budget_remaining) * capacity2 * 60.0
        setpoint = min(asset.power_max_charge, soc_limit, budget_limit)
        return -setpoint if setpoint > 0.0 else 0.0
    return 0.0


def _apply_setpoint(asset: BessAsset, setpoint: float) -> None:
    if setpoint > 0.0:
        energy = setpoint / 60.0
        asset.soc -= energy
        asset.discharged_mwh += energy
        asset.cycle_budget_remaining -= energy / (2.0 * asset.energy_capacity)
    else:
        grid_energy = -setpoint / 60.0
        stored = grid_energy * asset.round_trip_efficiency
        asset.soc += stored
        asset.charged_mwh += stored
        asset.cycle_budget_remaining -= grid_energy / (2.0 * asset.energy_capacity)
    if asset.soc < asset.min_soc_seen:
        asset.min_soc_seen = asset.soc
    elif asset.soc > asset.max_soc_seen:
        asset.max_soc_seen = asset.soc
    if asset.cycle_budget_remaining < asset.min_budget_seen:
        asset.min_budget_seen = asset.cycle_budget_remaining


def step_fleet(
    fleet: Iterable[BessAsset], last_published_price: float | None
) -> float:
    """Advance every asset one minute; returns the aggregate response in MW.

    Assets are updated in place. Each setpoint depends only on the shared
    price and the asset's own state, so the order is irrelevant.
    """
    total = 0.0
    for asset in fleet:
        setpoint = asset_setpoint(asset, last_published_price)
        if setpoint != 0.0:
            _apply_setpoint(asset, setpoint)
            total += setpoint
    return total


@dataclass(frozen=True)
class FleetConfig:
    """Sizing and behavior of the simulated fleet."""

    total_capacity_mw: float
    split: Mapping[RiskGroup, float]
    thresholds: Mapping[RiskGroup, tuple[float, float]]  # (upper, lower)
    cycle_limit_per_day: float = 2.0
    publication_delay_min: int = 2
    c_rate: float = 0.5
    round_trip_efficiency: float = 1.0
    asset_size_mw: float = 10.0

    def __post_init__(self) -> None:
        if self.total_capacity_mw < 0:
            raise ValueError("total capacity must be >= 0 MW")
        if self.publication_delay_min < 0:
            raise ValueError("publication delay must be >= 0 minutes")
        if self.c_rate <= 0:
            raise ValueError("C-rate must be > 0")
        if self.asset_size_mw <= 0:
            raise ValueError("asset size must be > 0 MW")


def build_fleet(
    config: FleetConfig, asset_size_mw: float | None = None
) -> dict[RiskGroup, list[BessAsset]]:
    """Instantiate assets per risk group at half charge.

    Group capacity is split into ``asset_size_mw`` units with any
    remainder folded into the group's last asset.
    """
    fractions = [config.split.get(group, 0.0) for group in RISK_GROUP_ORDER]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidSplit(
            f"risk-group fractions must be >= 0 and sum to 1, got {fractions}"
        )
    size = asset_size_mw if asset_size_mw is not None else config.asset_size_mw
    fleet: dict[RiskGroup, list[BessAsset]] = {g: [] for g in RISK_GROUP_ORDER}
    for group, fraction in zip(RISK_GROUP_ORDER, fractions):
        group_capacity = config.total_capacity_mw * fraction
        if group_capacity <= 0:
            continue
        if group not in config.thresholds:
            raise ThresholdsMissing(f"no thresholds for {group.value}")
        upper, lower = config.thresholds[group]
        n_units = max(1, int(group_capacity // size))
        sizes = [size] * (n_units - 1) + [group_capacity - size * (n_units - 1)]
        for power in sizes:
            energy = power / config.c_rate
            fleet[group].append(
                BessAsset(
                    power_max_discharge=power,
                    power_max_charge=power,
                    energy_capacity=energy,
                    soc=energy / 2.0,
                    cycle_budget_remaining=config.cycle_limit_per_day,
                    upper_threshold=upper,
                    lower_threshold=lower,
                    risk_group=group,
                    round_trip_efficiency=config.round_trip_efficiency,
                )
            )
    return fleet


def reset_cycle_budgets(fleet: Iterable[BessAsset], cycle_limit_per_day: float) -> None:
    """Restore every asset's cycle budget (called at each midnight)."""
    for asset in fleet:
        asset.cycle_budget_remaining = cycle_limit_per_day
