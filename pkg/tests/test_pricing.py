import math

import numpy as np
import pytest

from balansim.dispatch import DispatchResult, DispatchTarget, dispatch_minute
from balansim.pricing import (
    FormulaKind,
    IspAccumulator,
    IspFull,
    IspIncomplete,
    NoBidsAvailable,
    PriceComponents,
    compute_alpha,
    compute_components,
    price,
    price_before_alpha,
    price_curve,
    settlement_price,
    update_accumulator,
)

from conftest import make_ladder


def result_with(per_bid, marginal_up=None, marginal_down=None):
    return DispatchResult(
        per_bid=per_bid, marginal_mfrr_up=marginal_up, marginal_mfrr_down=marginal_down
    )


@pytest.fixture
def pricing_ladder():
    # VoAA+ = min(50, 120) = 50, VoAA- = max(40, -60) = 40, spot = 45
    return make_ladder(
        au=((50, 60), (80, 80)), ad=((40, 50),), mu=((120, 100),), md=((-60, 100),)
    )


def test_empty_minute(pricing_ladder):
    acc = update_accumulator(IspAccumulator(), 5.0, result_with({}), pricing_ladder)
    assert acc.minute_count == 1
    assert acc.afrr_volume_sum == 0.0
    assert acc.mfrr_up_max is None and acc.mfrr_down_min is None
    assert acc.si_cum_avg == 5.0


def test_afrr_weighted_average(pricing_ladder):
    acc = IspAccumulator()
    acc = update_accumulator(acc, -60.0, result_with({"aU0": 60.0}), pricing_ladder)
    acc = update_accumulator(acc, -40.0, result_with({"aU1": 40.0}), pricing_ladder)
    comps = compute_components(acc)
    assert comps.lambda_afrr == pytest.approx(62.0)  # (60*50 + 40*80) / 100


def test_afrr_literal_sum_of_ratios(pricing_ladder):
    acc = IspAccumulator()
    acc = update_accumulator(acc, -60.0, result_with({"aU0": 60.0}), pricing_ladder)
    acc = update_accumulator(acc, -40.0, result_with({"aU1": 40.0}), pricing_ladder)
    comps = compute_components(acc, ratio_of_sums=False)
    assert comps.lambda_afrr == pytest.approx(130.0)  # 50 + 80, not an average


def test_mfrr_running_max(pricing_ladder):
    acc = IspAccumulator()
    acc = update_accumulator(
        acc, -100.0, result_with({"mU0": 10.0}, marginal_up=120.0), pricing_ladder
    )
    acc = update_accumulator(
        acc, -100.0, result_with({"mU0": 5.0}, marginal_up=110.0), pricing_ladder
    )
    assert acc.mfrr_up_max == 120.0


def test_components_without_activations(pricing_ladder):
    ladder = make_ladder(au=((60, 50), (90, 50)), ad=((40, 50), (10, 50)))
    acc = update_accumulator(IspAccumulator(), 0.0, result_with({}), ladder)
    comps = compute_components(acc)
    assert comps.lambda_spot == 50.0  # (60 + 40) / 2
    assert comps.lambda_afrr == 50.0
    assert comps.lambda_mfrr is None


def test_mfrr_branch_follows_imbalance_sign(pricing_ladder):
    acc = IspAccumulator(
        minute_count=1,
        si_sum=30.0,
        mfrr_down_min=-20.0,
        mfrr_up_max=None,
        voaa_up=50.0,
        voaa_down=40.0,
        total_volume_sum=30.0,
    )
    assert compute_components(acc).lambda_mfrr == -20.0
    shortage = IspAccumulator(
        minute_count=1,
        si_sum=-30.0,
        mfrr_down_min=-20.0,
        mfrr_up_max=None,
        voaa_up=50.0,
        voaa_down=40.0,
        total_volume_sum=30.0,
    )
    assert compute_components(shortage).lambda_mfrr is None


def test_accumulator_full(pricing_ladder):
    acc = IspAccumulator()
    for _ in range(15):
        acc = update_accumulator(acc, 0.0, result_with({}), pricing_ladder)
    with pytest.raises(IspFull):
        update_accumulator(acc, 0.0, result_with({}), pricing_ladder)


def test_no_bids_available():
    ladder = make_ladder(au=((60, 50), (90, 50)))  # no downward bids at all
    acc = update_accumulator(IspAccumulator(), 0.0, result_with({}), ladder)
    with pytest.raises(NoBidsAvailable):
        compute_components(acc)


def test_alpha_zero_in_band():
    assert compute_alpha(123.0, -100.0, -500.0) == 0.0
    assert compute_alpha(0.0, 150.0, 400.0) == 0.0
    assert compute_alpha(0.0, -150.0, -400.0) == 0.0


def test_alpha_clip_at_anchor():
    assert compute_alpha(400.0, -200.0, -700.0) == 0.0


def test_alpha_at_sigmoid_center():
    # two-ISP average magnitude 450 sits at the sigmoid center: half gain
    assert compute_alpha(0.0, -200.0, -700.0) == pytest.approx(100.0)


def test_alpha_pushes_high_prices_down_in_surplus():
    alpha = compute_alpha(0.0, 200.0, 700.0)
    assert alpha == pytest.approx(-100.0)


def test_current_formula_deadband():
    acc = IspAccumulator(minute_count=1, si_sum=10.0, voaa_up=60.0, voaa_down=40.0)
    comps = compute_components(acc)
    assert price(FormulaKind.CURRENT, comps, acc) == 50.0


def test_current_formula_shortage_takes_max():
    comps = PriceComponents(lambda_afrr=62.0, lambda_mfrr=500.0, lambda_spot=50.0)
    acc = IspAccumulator(minute_count=1, si_sum=-30.0)
    assert price_before_alpha(FormulaKind.CURRENT, comps, acc) == 500.0
    surplus = IspAccumulator(minute_count=1, si_sum=30.0)
    assert price_before_alpha(FormulaKind.CURRENT, comps, surplus) == 62.0


def test_current_collapses_without_mfrr():
    comps = PriceComponents(lambda_afrr=62.0, lambda_mfrr=None, lambda_spot=50.0)
    acc = IspAccumulator(minute_count=1, si_sum=-30.0)
    assert price_before_alpha(FormulaKind.CURRENT, comps, acc) == 62.0


def test_mmsd_identity_at_zero_imbalance():
    comps = PriceComponents(lambda_afrr=80.0, lambda_mfrr=200.0, lambda_spot=50.0)
    acc = IspAccumulator(minute_count=1, si_sum=0.0)
    assert price_before_alpha(FormulaKind.MMSD, comps, acc) == 50.0


def test_mmsd_boundary_weight():
    comps = PriceComponents(lambda_afrr=80.0, lambda_mfrr=None, lambda_spot=50.0)
    acc = IspAccumulator(minute_count=1, si_sum=25.0)
    w = math.exp(-1.0)
    expected = w * 50.0 + (1.0 - w) * 80.0
    assert price_before_alpha(FormulaKind.MMSD, comps, acc) == pytest.approx(expected)


def test_mmsd_continuity_across_deadband():
    # The smoothing weight has max slope ~0.0609/MW, so on a 0.01 MW grid
    # the step stays below 0.01 EUR/MWh whenever the components sit within
    # ~16 EUR/MWh of each other; wider spreads scale proportionally.
    comps = PriceComponents(lambda_afrr=55.0, lambda_mfrr=62.0, lambda_spot=50.0)
    grid = np.arange(-150.0, 150.0, 0.01)
    values = price_curve(FormulaKind.MMSD, comps, grid)
    assert np.max(np.abs(np.diff(values))) < 0.01

    wide = PriceComponents(lambda_afrr=90.0, lambda_mfrr=300.0, lambda_spot=50.0)
    spread = 300.0 - 50.0
    values = price_curve(FormulaKind.MMSD, wide, grid)
    assert np.max(np.abs(np.diff(values))) < 0.07 * 0.01 * spread


def test_wadw_dynamic_weights():
    acc = IspAccumulator(
        minute_count=5,
        si_sum=-250.0,
        afrr_value_sum=62.0 * 300.0,
        afrr_volume_sum=300.0,
        total_volume_sum=400.0,
        mfrr_up_max=120.0,
        voaa_up=60.0,
        voaa_down=40.0,
    )
    comps = compute_components(acc)
    assert price_before_alpha(FormulaKind.WADW, comps, acc) == pytest.approx(76.5)


def test_wadw_bounded_by_components():
    rng = np.random.default_rng(5)
    for _ in range(200):
        afrr = float(rng.uniform(-200, 400))
        mfrr = float(rng.uniform(-200, 600))
        volume_afrr = float(rng.uniform(0.1, 500))
        volume_total = volume_afrr + float(rng.uniform(0.1, 500))
        acc = IspAccumulator(
            minute_count=3,
            si_sum=float(rng.uniform(-900, 900)),
            afrr_value_sum=afrr * volume_afrr,
            afrr_volume_sum=volume_afrr,
            total_volume_sum=volume_total,
            mfrr_up_max=mfrr,
            mfrr_down_min=mfrr,
            voaa_up=50.0,
            voaa_down=40.0,
        )
        comps = compute_components(acc)
        value = price_before_alpha(FormulaKind.WADW, comps, acc)
        assert min(afrr, mfrr) - 1e-9 <= value <= max(afrr, mfrr) + 1e-9


def test_settlement_requires_full_isp(pricing_ladder):
    acc = IspAccumulator()
    for _ in range(14):
        acc = update_accumulator(acc, -10.0, result_with({}), pricing_ladder)
    with pytest.raises(IspIncomplete):
        settlement_price(FormulaKind.CURRENT, acc)
    acc = update_accumulator(acc, -10.0, result_with({}), pricing_ladder)
    comps = compute_components(acc)
    assert settlement_price(FormulaKind.CURRENT, acc) == price(
        FormulaKind.CURRENT, comps, acc
    )


def test_expensive_mfrr_drives_whole_isp(pricing_ladder):
    ladder = make_ladder(
        au=((50, 60), (80, 80)), ad=((40, 50),), mu=((500, 100),), md=((-60, 100),)
    )
    acc = IspAccumulator()
    for minute in range(15):
        if minute == 2:
            result = dispatch_minute(DispatchTarget(160.0), ladder)
            si = -160.0
        else:
            result = dispatch_minute(DispatchTarget(30.0), ladder)
            si = -30.0
        acc = update_accumulator(acc, si, result, ladder)
    settled = settlement_price(FormulaKind.CURRENT, acc)
    assert acc.si_cum_avg < -25.0
    assert settled == 500.0  # one expensive activated bid drives the price


def test_price_curve_matches_scalar_path():
    rng = np.random.default_rng(9)
    for _ in range(50):
        comps = PriceComponents(
            lambda_afrr=float(rng.uniform(-200, 400)),
            lambda_mfrr=float(rng.uniform(-300, 600)) if rng.random() > 0.3 else None,
            lambda_spot=float(rng.uniform(-100, 200)),
        )
        prev = float(rng.uniform(-600, 600))
        w_afrr = float(rng.uniform(0, 1))
        si_values = rng.uniform(-500, 500, size=41)
        for formula in FormulaKind:
            curve = price_curve(
                formula, comps, si_values, prev_isp_si_avg=prev, w_afrr=w_afrr
            )
            for si, from_curve in zip(si_values, curve):
                volume = 100.0
                acc = IspAccumulator(
                    minute_count=1,
                    si_sum=float(si),
                    prev_isp_si_avg=prev,
                    afrr_volume_sum=w_afrr * volume,
                    total_volume_sum=volume,
                )
                scalar = price(formula, comps, acc)
                assert scalar == pytest.approx(from_curve, abs=1e-9)


def test_alpha_discontinuity_is_confined_to_extreme_boundary():
    # The smoothed-deadband formula is continuous everywhere; the alpha
    # correction switches on at |SI| = 150 by definition, so the combined
    # price may jump there but nowhere else.
    comps = PriceComponents(lambda_afrr=90.0, lambda_mfrr=300.0, lambda_spot=50.0)
    grid = np.arange(-400.0, 400.0, 0.01)
    bare = price_curve(FormulaKind.MMSD, comps, grid, include_alpha=False)
    assert np.max(np.abs(np.diff(bare))) < 0.25  # smooth: slope * step
    full = price_curve(FormulaKind.MMSD, comps, grid, prev_isp_si_avg=-450.0)
    jumps = np.abs(np.diff(full))
    assert np.max(jumps) > 0.5  # the alpha switch-on is a genuine jump
    jump_positions = grid[:-1][jumps >= 0.5]
    assert np.all((np.abs(jump_positions) >= 149.9) & (np.abs(jump_positions) <= 150.1))
