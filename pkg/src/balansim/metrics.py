"""Evaluation quantities computed from completed scenario results.

Per-ISP price RMSE against the settlement price, |SI| distribution bins
at 1-minute and 15-minute level, balancing cost per ISP, and normalized
per-risk-group fleet profit, plus the long-format metrics table.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .fleet import RISK_GROUP_ORDER, RiskGroup
from .market_data import MINUTES_PER_ISP
from .pricing import DEADBAND_MW, EXTREME_MW, FormulaKind
from .simulator import IspRecord, ScenarioResult


class EmptyGroup(ValueError):
    """Profit requested for a risk group without capacity."""


@dataclass(frozen=True, slots=True)
class MetricRow:
    capacity_mw: float
    formula: str
    metric: str
    aggregation: str
    value: float


def rmse_per_isp(record: IspRecord) -> float:
    """RMSE of the 15 intermediate prices against the settlement price."""
    if record.minutes is None or len(record.minutes) != MINUTES_PER_ISP:
        raise ValueError("record must carry its 15 minute traces")
    diffs = [m.intermediate_price - record.settlement_price for m in record.minutes]
    return float(np.sqrt(np.mean(np.square(diffs))))


def rmse_series(result: ScenarioResult) -> np.ndarray:
    """Per-ISP RMSE over a whole scenario, from the minute price array."""
    per_isp = result.minute_price.reshape(-1, MINUTES_PER_ISP)
    diffs = per_isp - result.settlement[:, None]
    return np.sqrt(np.mean(np.square(diffs), axis=1))


def si_bins(values: Sequence[float]) -> tuple[float, float, float]:
    """Shares of |value| in the deadband (<25), normal (25-150, inclusive
    at both ends) and extreme (>150 MW) regions."""
    magnitude = np.abs(np.asarray(values, dtype=np.float64))
    if magnitude.size == 0:
        raise ValueError("need at least one value to bin")
    n = magnitude.size
    deadband = int(np.count_nonzero(magnitude < DEADBAND_MW))
    extreme = int(np.count_nonzero(magnitude > EXTREME_MW))
    normal = n - deadband - extreme
    return deadband / n, normal / n, extreme / n


def balancing_cost(records: Sequence[IspRecord]) -> float:
    """Mean balancing cost per ISP: activation cost plus BRP payment."""
    if not records:
        return 0.0
    return float(np.mean([r.activation_cost + r.brp_payment for r in records]))


def fleet_profit(result: ScenarioResult, group: RiskGroup) -> float:
    """Gross profit per ISP per MW of one risk group, settlement-valued.

    Each ISP's net injected energy of the group is valued at that ISP's
    settlement price; grid fees are not modelled.
    """
    capacity = result.group_capacity_mw.get(group, 0.0)
    if capacity <= 0.0:
        raise EmptyGroup(f"group {group.value} has no capacity in this scenario")
    cash = float(result.settlement @ result.group_energy_mwh[group])
    return cash / result.n_isps / capacity


def within_isp_std(result: ScenarioResult) -> float:
    """Mean over ISPs of the population std of the 15 net imbalances."""
    per_isp = result.minute_net_si.reshape(-1, MINUTES_PER_ISP)
    return float(np.mean(np.std(per_isp, axis=1)))


def boxplot_stats(values: Sequence[float]) -> dict[str, float]:
    """Standard box-plot summary: quartiles, Tukey whiskers and the mean."""
    arr = np.asarray(values, dtype=np.float64)
    q1, median, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    in_low = arr[arr >= q1 - 1.5 * iqr]
    in_high = arr[arr <= q3 + 1.5 * iqr]
    return {
        "mean": float(np.mean(arr)),
        "median": float(median),
        "q1": float(q1),
        "q3": float(q3),
        "whisker_low": float(np.min(in_low)) if in_low.size else float(q1),
        "whisker_high": float(np.max(in_high)) if in_high.size else float(q3),
    }


_BIN_NAMES = ("deadband", "normal", "extreme")


def summarize_sweep(
    sweep: dict[tuple[float, FormulaKind], ScenarioResult]
) -> list[MetricRow]:
    """Flatten a sweep into plot-ready long-format metric rows."""
    rows: list[MetricRow] = []
    for capacity, formula in sorted(sweep, key=lambda k: (k[0], k[1].value)):
        result = sweep[(capacity, formula)]
        label = formula.value

        for aggregation, value in boxplot_stats(rmse_series(result)).items():
            rows.append(MetricRow(capacity, label, "rmse_per_isp", aggregation, value))

        for name, share in zip(_BIN_NAMES, si_bins(result.minute_net_si)):
            rows.append(MetricRow(capacity, label, "si_share_1min", name, share))
        for name, share in zip(_BIN_NAMES, si_bins(result.isp_si_avg)):
            rows.append(MetricRow(capacity, label, "si_share_15min", name, share))

        rows.append(
            MetricRow(
                capacity,
                label,
                "balancing_cost_per_isp",
                "mean",
                balancing_cost(result.isp_records),
            )
        )
        rows.append(
            MetricRow(capacity, label, "within_isp_si_std", "mean", within_isp_std(result))
        )
        for group in RISK_GROUP_ORDER:
            if result.group_capacity_mw.get(group, 0.0) > 0.0:
                rows.append(
                    MetricRow(
                        capacity,
                        label,
                        "fleet_profit_per_isp_per_mw",
                        group.value,
                        fleet_profit(result, group),
                    )
                )
    return rows


METRICS_CSV_HEADER = ("capacity_mw", "formula", "metric", "aggregation", "value")


def write_metrics_csv(
    path: str | Path, rows: Sequence[MetricRow], header_comment: str | None = None
) -> None:
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_HEADER)
        for row in rows:
            writer.writerow(
                [repr(row.capacity_mw), row.formula, row.metric, row.aggregation, repr(row.value)]
            )
