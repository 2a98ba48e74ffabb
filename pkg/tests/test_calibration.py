import numpy as np
import pytest

from balansim.calibration import (
    CalibrationGrid,
    DegenerateGridWarning,
    EmptySeries,
    ProfitSample,
    TooFewSamples,
    calibrate,
    cvar,
    default_grid,
    load_thresholds_csv,
    replay_profit,
    save_thresholds_csv,
    select_thresholds,
)
from balansim.fleet import BessAsset, RiskGroup


def unit_asset(soc=1.0):
    return BessAsset(
        power_max_discharge=1.0,
        power_max_charge=1.0,
        energy_capacity=2.0,
        soc=soc,
        cycle_budget_remaining=2.0,
        upper_threshold=0.0,
        lower_threshold=0.0,
        risk_group=RiskGroup.MEDIUM,
    )


def test_constant_prices_no_trades():
    samples = replay_profit([100.0] * 60, 150.0, 50.0, unit_asset())
    assert [s.profit_eur for s in samples] == [0.0]


def test_alternating_price_toy_replay():
    # 0 / 300 alternation with thresholds (150, 50): charge at 0 (free),
    # discharge at 300 for 300/60 = 5 EUR each, twice in four minutes.
    prices = [0.0, 300.0, 0.0, 300.0]
    samples = replay_profit(prices, 150.0, 50.0, unit_asset())
    assert len(samples) == 1
    assert samples[0].profit_eur == pytest.approx(10.0)
    assert samples[0].profit_eur > 0


def test_replay_aggregates_to_days():
    prices = [0.0, 300.0] * 1440  # two whole days
    samples = replay_profit(prices, 150.0, 50.0, unit_asset())
    assert len(samples) == 2
    assert samples[0].day != samples[1].day


def test_replay_empty_series():
    with pytest.raises(EmptySeries):
        replay_profit([], 150.0, 50.0, unit_asset())


def test_replay_respects_cycle_budget():
    # 1 MW for a day at full alternation would be 24 MWh of throughput,
    # but 2 cycles * 2 * 2 MWh caps it at 8 MWh.
    prices = [0.0, 300.0] * 720
    samples = replay_profit(prices, 150.0, 50.0, unit_asset())
    asset = unit_asset()
    throughput_cap = asset.cycle_budget_remaining * 2 * asset.energy_capacity
    # discharge half of the throughput at 300 EUR/MWh
    assert samples[0].profit_eur <= 300.0 * throughput_cap / 2 + 1e-9


def test_settlement_valuation_uses_isp_close():
    # 15-minute series: trigger price high at minute 0, settlement price
    # is the minute-15 value, so the cash flow values at 10 not 300.
    prices = [300.0] + [100.0] * 13 + [10.0]
    minute = replay_profit(prices, 150.0, -50.0, unit_asset(), valuation="minute")
    settled = replay_profit(prices, 150.0, -50.0, unit_asset(), valuation="settlement")
    assert minute[0].profit_eur > settled[0].profit_eur


def test_cvar_degenerate_distribution():
    assert cvar([10.0] * 100, 0.05) == pytest.approx(-10.0)


def test_cvar_penalizes_tail_losses():
    samples = [10.0] * 95 + [-100.0] * 5
    assert cvar(samples, 0.05) == pytest.approx(100.0)


def test_cvar_ceiling_rule():
    samples = [ProfitSample(None, p) for p in [5.0, 1.0, 9.0, 7.0, 3.0, 8.0, 2.0, 6.0, 4.0, 0.0]]
    # ceil(10 * 0.05) = 1 sample: the worst day is 0.0
    assert cvar(samples, 0.05) == pytest.approx(0.0)


def test_cvar_errors():
    with pytest.raises(TooFewSamples):
        cvar([], 0.05)
    with pytest.raises(ValueError):
        cvar([1.0], 0.0)


TOY_CANDIDATES = [(200.0, 0.0), (300.0, -50.0), (400.0, -100.0)]
TOY_MEANS = [100.0, 80.0, 60.0]
TOY_RISKS = [100.0, 10.0, -10.0]


@pytest.mark.parametrize(
    "w,expected",
    [
        (0.0, (200.0, 0.0)),  # pure expected profit
        (0.5, (300.0, -50.0)),
        (0.8, (400.0, -100.0)),
        (1.0, (400.0, -100.0)),  # pure risk minimization
    ],
)
def test_select_thresholds_toy_table(w, expected):
    assert select_thresholds(TOY_CANDIDATES, TOY_MEANS, TOY_RISKS, w) == expected


def test_selection_invariant_to_profit_shift():
    for w in (0.0, 0.5, 0.8, 1.0):
        base = select_thresholds(TOY_CANDIDATES, TOY_MEANS, TOY_RISKS, w)
        shifted_means = [m + 1234.5 for m in TOY_MEANS]
        shifted_risks = [r - 1234.5 for r in TOY_RISKS]  # cvar shifts opposite
        assert select_thresholds(TOY_CANDIDATES, shifted_means, shifted_risks, w) == base


def test_selection_tie_breaks_to_wider_band():
    candidates = [(100.0, 0.0), (200.0, -100.0)]
    with pytest.warns(DegenerateGridWarning):  # identical scores everywhere
        pick = select_thresholds(candidates, [5.0, 5.0], [1.0, 1.0], 0.5)
    assert pick == (200.0, -100.0)


def test_degenerate_grid_warns():
    with pytest.warns(DegenerateGridWarning):
        pick = select_thresholds([(100.0, 0.0), (100.0, 0.0)], [1.0, 1.0], [2.0, 2.0], 0.5)
    assert pick == (100.0, 0.0)


def test_calibrate_risk_neutral_maximizes_mean():
    # (100, -50) trades the full alternation; a 400 upper never discharges.
    rng = np.random.default_rng(0)
    prices = list(rng.choice([-100.0, 300.0], size=2880))
    grid = CalibrationGrid((100.0, 400.0), (-50.0, -200.0), w=0.0)
    upper, lower = calibrate(grid, prices, unit_asset())
    assert upper == 100.0
    assert lower == -50.0


def test_calibrate_deterministic():
    rng = np.random.default_rng(1)
    prices = list(rng.normal(80.0, 120.0, size=2880))
    grid = CalibrationGrid((50.0, 150.0, 250.0), (-50.0, 0.0), w=0.5)
    first = calibrate(grid, prices, unit_asset())
    second = calibrate(grid, prices, unit_asset())
    assert first == second


def test_grid_pairs_respect_order():
    grid = CalibrationGrid((0.0, 100.0), (0.0, 50.0), w=0.5)
    assert all(u >= l for u, l in grid.pairs())
    assert (0.0, 50.0) not in grid.pairs()


def test_default_grid_span():
    grid = default_grid(0.5)
    assert min(grid.upper_candidates) == -200.0
    assert max(grid.upper_candidates) == 600.0
    assert grid.pairs()


def test_thresholds_csv_round_trip(tmp_path):
    rows = {
        RiskGroup.RISK_NEUTRAL: (100.0, -25.0, 50.0, -10.0),
        RiskGroup.MEDIUM: (150.0, -50.0, 40.0, -20.0),
        RiskGroup.RISK_AVERSE: (250.0, -100.0, 30.0, -25.0),
    }
    path = tmp_path / "thresholds.csv"
    save_thresholds_csv(path, rows)
    loaded = load_thresholds_csv(path)
    assert loaded[RiskGroup.MEDIUM] == (150.0, -50.0)
    assert len(loaded) == 3
