"""Minute-level simulator of a decentralized electricity balancing market.

Closed feedback loop between merit-order reserve dispatch, intermediate
imbalance-price publication and the implicit response of a simulated
battery fleet, with risk-calibrated bang-bang controllers and the
evaluation metrics of the accompanying study setup.
"""

__version__ = "0.1.0"

from .calibration import CalibrationGrid, ProfitSample, calibrate, cvar, replay_profit
from .dispatch import DispatchResult, DispatchTarget, dispatch_minute, dispatch_oracle
from .fleet import (
    BessAsset,
    FleetConfig,
    RiskGroup,
    asset_setpoint,
    build_fleet,
    step_fleet,
)
from .market_data import (
    Bid,
    BidLadder,
    Direction,
    MinuteIndex,
    Product,
    SynthParams,
    SystemImbalanceSeries,
    generate_synthetic,
    load_bid_ladders,
    load_si_series,
)
from .metrics import balancing_cost, fleet_profit, rmse_per_isp, si_bins
from .pricing import (
    FormulaKind,
    IspAccumulator,
    PriceComponents,
    compute_alpha,
    compute_components,
    price,
    settlement_price,
    update_accumulator,
)
from .simulator import (
    IspRecord,
    MinuteTrace,
    ScenarioConfig,
    ScenarioResult,
    run_capacity_sweep,
    run_scenario,
)

__all__ = [
    "__version__",
    "Bid",
    "BidLadder",
    "BessAsset",
    "CalibrationGrid",
    "Direction",
    "DispatchResult",
    "DispatchTarget",
    "FleetConfig",
    "FormulaKind",
    "IspAccumulator",
    "IspRecord",
    "MinuteIndex",
    "MinuteTrace",
    "PriceComponents",
    "Product",
    "ProfitSample",
    "RiskGroup",
    "ScenarioConfig",
    "ScenarioResult",
    "SynthParams",
    "SystemImbalanceSeries",
    "asset_setpoint",
    "balancing_cost",
    "build_fleet",
    "calibrate",
    "compute_alpha",
    "compute_components",
    "cvar",
    "dispatch_minute",
    "dispatch_oracle",
    "fleet_profit",
    "generate_synthetic",
    "load_bid_ladders",
    "load_si_series",
    "price",
    "replay_profit",
    "rmse_per_isp",
    "run_capacity_sweep",
    "run_scenario",
    "settlement_price",
    "si_bins",
    "step_fleet",
    "update_accumulator",
]
