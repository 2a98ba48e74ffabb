"""Closed-loop minute simulation: dispatch, pricing, publication, response.

Every minute the operator observes the net system imbalance (historical
plus simulated response), activates reserves against it, and computes
the intermediate price from the running ISP accumulator. The price is
published with a delay; the battery fleet reacts to the latest published
price, which feeds back into the next minute's imbalance. At minute 15
of each ISP the settlement price is fixed and the accumulator resets.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dispatch import DispatchResult, DispatchTarget, dispatch_minute
from .fleet import (
    BessAsset,
    FleetConfig,
    RISK_GROUP_ORDER,
    RiskGroup,
    build_fleet,
    reset_cycle_budgets,
    step_fleet,
)
from .market_data import (
    MINUTES_PER_DAY,
    MINUTES_PER_ISP,
    BidLadder,
    DataError,
    MinuteIndex,
    SynthParams,
    SystemImbalanceSeries,
    generate_synthetic,
    load_bid_ladders,
    load_si_series,
)
from .pricing import (
    FormulaKind,
    IspAccumulator,
    compute_components,
    price,
    settlement_price,
    update_accumulator,
)


@dataclass(frozen=True)
class ScenarioConfig:
    """One scenario: formula, fleet, data source and switches."""

    formula: FormulaKind
    fleet: FleetConfig
    si_csv: Path | None = None
    bids_csv: Path | None = None
    synth_seed: int | None = None
    synth_days: int | None = None
    synth_params: SynthParams | None = None
    ratio_of_sums: bool = True
    keep_minute_traces: bool = False

    def __post_init__(self) -> None:
        has_files = self.si_csv is not None and self.bids_csv is not None
        has_synth = self.synth_seed is not None and self.synth_days is not None
        if not has_files and not has_synth:
            raise ValueError(
                "scenario needs either (si_csv, bids_csv) or (synth_seed, synth_days)"
            )


@dataclass(slots=True)
class MinuteTrace:
    """Full record of one simulated minute (kept only on request)."""

    minute: MinuteIndex
    si_exogenous: float
    v_brp: float
    net_imbalance: float
    dispatch: DispatchResult
    intermediate_price: float
    published_price: float | None


@dataclass(slots=True)
class IspRecord:
    """Settlement-level record of one ISP."""

    isp: int
    settlement_price: float
    activation_cost: float  # EUR, sum of per-minute dispatch cost
    brp_payment: float  # EUR, positive = operator pays the simulated BRPs
    si_avg_15min: float  # MW, mean of net imbalances
    minutes: list[MinuteTrace] | None = None


@dataclass(frozen=True)
class FleetAudit:
    """Run-wide physical-constraint audit of the fleet."""

    n_assets: int
    min_soc_mwh: float
    max_soc_overshoot_mwh: float
    min_cycle_budget: float
    max_energy_residual_mwh: float


@dataclass
class ScenarioResult:
    """Per-minute and per-ISP traces of one scenario run."""

    config: ScenarioConfig
    isp_records: list[IspRecord]
    minute_si_exogenous: np.ndarray
    minute_v_brp: np.ndarray
    minute_net_si: np.ndarray
    minute_price: np.ndarray
    settlement: np.ndarray
    activation_cost: np.ndarray
    brp_payment: np.ndarray
    isp_si_avg: np.ndarray
    group_energy_mwh: dict[RiskGroup, np.ndarray]  # net injected per ISP
    group_capacity_mw: dict[RiskGroup, float]
    fleet_audit: FleetAudit

    @property
    def n_isps(self) -> int:
        return len(self.settlement)


def load_inputs(
    config: ScenarioConfig,
) -> tuple[SystemImbalanceSeries, list[BidLadder]]:
    """Materialize the exogenous inputs of a scenario."""
    if config.si_csv is not None:
        series = load_si_series(config.si_csv)
        ladders = load_bid_ladders(config.bids_csv)
        return series, ladders
    params = config.synth_params or SynthParams()
    return generate_synthetic(config.synth_seed, config.synth_days, params)


def _ladder_offsets(
    series: SystemImbalanceSeries, ladders: Sequence[BidLadder]
) -> list[int]:
    offsets = [
        int((ladder.window_start - series.start).total_seconds() // 60)
        for ladder in ladders
    ]
    if not offsets or offsets[0] > 0:
        raise DataError("no bid ladder in effect at the start of the series")
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise DataError("bid ladder windows must be strictly increasing")
    return offsets


def _audit(fleet_groups: dict[RiskGroup, list[BessAsset]]) -> FleetAudit:
    assets = [a for group in fleet_groups.values() for a in group]
    if not assets:
        return FleetAudit(0, 0.0, 0.0, 0.0, 0.0)
    return FleetAudit(
        n_assets=len(assets),
        min_soc_mwh=min(a.min_soc_seen for a in assets),
        max_soc_overshoot_mwh=max(a.max_soc_seen - a.energy_capacity for a in assets),
        min_cycle_budget=min(a.min_budget_seen for a in assets),
        max_energy_residual_mwh=max(
            abs((a.soc - a.soc_initial) - (a.charged_mwh - a.discharged_mwh))
            for a in assets
        ),
    )


def run_scenario(
    config: ScenarioConfig,
    data: tuple[SystemImbalanceSeries, Sequence[BidLadder]] | None = None,
) -> ScenarioResult:
    """Run the feedback loop over the whole input series.

    ``data`` short-circuits input loading when the caller already holds
    the series and ladders (sweeps reuse them across cells).
    """
    series, ladders = data if data is not None else load_inputs(config)
    offsets = _ladder_offsets(series, ladders)
    fleet_groups = build_fleet(config.fleet)
    has_fleet = any(fleet_groups.values())
    delay = config.fleet.publication_delay_min
    if has_fleet and delay < 1:
        raise ValueError(
            "publication delay must be at least 1 minute in the closed loop"
        )
    cycle_limit = config.fleet.cycle_limit_per_day
    formula = config.formula
    ros = config.ratio_of_sums
    keep_traces = config.keep_minute_traces

    # Per-group activity envelope: while the published price sits inside
    # [max lower, min upper] of a group, every asset in it stays idle.
    group_state = [
        (
            group,
            assets,
            min(a.upper_threshold for a in assets),
            max(a.lower_threshold for a in assets),
        )
        for group, assets in fleet_groups.items()
        if assets
    ]
    all_assets = [a for _, assets, _, _ in group_state for a in assets]

    si_exo = series.values.tolist()
    n = len(si_exo)
    prices: list[float] = []
    v_brp_list: list[float] = []
    net_list: list[float] = []
    records: list[IspRecord] = []
    settlement_list: list[float] = []
    act_cost_list: list[float] = []
    brp_payment_list: list[float] = []
    si_avg_list: list[float] = []
    group_energy: dict[RiskGroup, list[float]] = {g: [] for g, *_ in group_state}

    acc = IspAccumulator()
    ladder_idx = 0
    last_offset_idx = len(offsets) - 1
    isp_cost = 0.0
    isp_v_sum = 0.0
    isp_group_energy = {g: 0.0 for g, *_ in group_state}
    traces: list[MinuteTrace] = []

    for t in range(n):
        if t and t % MINUTES_PER_DAY == 0 and all_assets:
            reset_cycle_budgets(all_assets, cycle_limit)
        while ladder_idx < last_offset_idx and offsets[ladder_idx + 1] <= t:
            ladder_idx += 1
        ladder = ladders[ladder_idx]

        published = prices[t - delay] if t >= delay else None
        v_brp = 0.0
        if published is not None and group_state:
            for group, assets, upper_env, lower_env in group_state:
                if published > upper_env or published < lower_env:
                    g_v = step_fleet(assets, published)
                    if g_v:
                        v_brp += g_v
                        isp_group_energy[group] += g_v / 60.0

        net = si_exo[t] + v_brp
        result = dispatch_minute(DispatchTarget(-net), ladder)
        acc = update_accumulator(acc, net, result, ladder)
        comps = compute_components(acc, ratio_of_sums=ros)
        intermediate = price(formula, comps, acc, ratio_of_sums=ros)

        prices.append(intermediate)
        v_brp_list.append(v_brp)
        net_list.append(net)
        isp_cost += result.cost_per_minute
        isp_v_sum += v_brp
        if keep_traces:
            traces.append(
                MinuteTrace(
                    minute=MinuteIndex.from_absolute(t),
                    si_exogenous=si_exo[t],
                    v_brp=v_brp,
                    net_imbalance=net,
                    dispatch=result,
                    intermediate_price=intermediate,
                    published_price=published,
                )
            )

        if t % MINUTES_PER_ISP == MINUTES_PER_ISP - 1:
            settled = settlement_price(formula, acc, ratio_of_sums=ros)
            mean_v = isp_v_sum / MINUTES_PER_ISP
            payment = settled * mean_v * 0.25
            isp_ordinal = t // MINUTES_PER_ISP
            records.append(
                IspRecord(
                    isp=isp_ordinal,
                    settlement_price=settled,
                    activation_cost=isp_cost,
                    brp_payment=payment,
                    si_avg_15min=acc.si_cum_avg,
                    minutes=traces if keep_traces else None,
                )
            )
            settlement_list.append(settled)
            act_cost_list.append(isp_cost)
            brp_payment_list.append(payment)
            si_avg_list.append(acc.si_cum_avg)
            for group, energy in isp_group_energy.items():
                group_energy[group].append(energy)
                isp_group_energy[group] = 0.0
            acc = IspAccumulator(prev_isp_si_avg=acc.si_cum_avg)
            isp_cost = 0.0
            isp_v_sum = 0.0
            traces = []

    group_capacity = {
        group: sum(a.power_max_discharge for a in assets)
        for group, assets, _, _ in group_state
    }
    return ScenarioResult(
        config=config,
        isp_records=records,
        minute_si_exogenous=np.array(si_exo),
        minute_v_brp=np.array(v_brp_list),
        minute_net_si=np.array(net_list),
        minute_price=np.array(prices),
        settlement=np.array(settlement_list),
        activation_cost=np.array(act_cost_list),
        brp_payment=np.array(brp_payment_list),
        isp_si_avg=np.array(si_avg_list),
        group_energy_mwh={g: np.array(v) for g, v in group_energy.items()},
        group_capacity_mw=group_capacity,
        fleet_audit=_audit(fleet_groups),
    )


def _sweep_cell(
    args: tuple[ScenarioConfig, float, FormulaKind]
) -> tuple[float, str, ScenarioResult]:
    base, capacity, formula = args
    config = replace(
        base,
        formula=formula,
        fleet=replace(base.fleet, total_capacity_mw=capacity),
    )
    return capacity, formula.value, run_scenario(config)


def run_capacity_sweep(
    base: ScenarioConfig,
    capacities: Sequence[float],
    formulas: Sequence[FormulaKind],
    jobs: int = 1,
) -> dict[tuple[float, FormulaKind], ScenarioResult]:
    """Run every (capacity, formula) cell; cells are independent.

    With ``jobs > 1`` cells run in separate processes and reload their
    inputs from the config (deterministic either way).
    """
    capacities = list(capacities)
    if capacities != sorted(capacities):
        raise ValueError("capacities must be sorted ascending")
    cells = [(base, cap, formula) for cap in capacities for formula in formulas]
    results: dict[tuple[float, FormulaKind], ScenarioResult] = {}
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for capacity, formula_value, result in pool.map(_sweep_cell, cells):
                results[(capacity, FormulaKind(formula_value))] = result
    else:
        data = load_inputs(base)
        for base_cfg, capacity, formula in cells:
            config = replace(
                base_cfg,
                formula=formula,
                fleet=replace(base_cfg.fleet, total_capacity_mw=capacity),
            )
            results[(capacity, formula)] = run_scenario(config, data=data)
    return results


ISP_CSV_HEADER = (
    "capacity_mw",
    "formula",
    "isp",
    "settlement_price",
    "activation_cost_eur",
    "brp_payment_eur",
    "si_avg_mw",
)


def write_isp_records_csv(
    path: str | Path,
    sweep: dict[tuple[float, FormulaKind], ScenarioResult],
    header_comment: str | None = None,
) -> None:
    """One row per (scenario cell, ISP), sorted for reproducible bytes."""
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(ISP_CSV_HEADER) + "\n")
        for capacity, formula in sorted(sweep, key=lambda k: (k[0], k[1].value)):
            result = sweep[(capacity, formula)]
            for record in result.isp_records:
                fh.write(
                    f"{capacity!r},{formula.value},{record.isp},"
                    f"{record.settlement_price!r},{record.activation_cost!r},"
                    f"{record.brp_payment!r},{record.si_avg_15min!r}\n"
                )
