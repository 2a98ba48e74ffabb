"""Config-driven command line: calibrate, run, sweep, synth, validate.

The config is a flat ``key = value`` file ('#' starts a comment). All
randomness flows from the config seed; identical command, config and
inputs produce byte-identical outputs. Progress goes to stderr, data
only to files.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from statistics import fmean

import numpy as np

from . import __version__
from .calibration import (
    cvar,
    evaluate_grid,
    load_price_csv,
    load_thresholds_csv,
    replay_profit,
    save_thresholds_csv,
    select_thresholds,
)
from .fleet import BessAsset, FleetConfig, RISK_GROUP_ORDER, RiskGroup
from .market_data import (
    DataError,
    SynthParams,
    generate_synthetic,
    load_bid_ladders,
    load_si_series,
    save_bid_ladders,
    save_si_series,
)
from .metrics import summarize_sweep, write_metrics_csv
from .pricing import FormulaKind
from .simulator import (
    ScenarioConfig,
    run_capacity_sweep,
    run_scenario,
    write_isp_records_csv,
)


class ConfigError(ValueError):
    """Bad or missing key in the scenario config."""


class UsageError(Exception):
    """Command line itself is malformed."""


def parse_config_file(path: Path) -> dict[str, str]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        config[key.strip()] = value.strip()
    return config


def _get(cfg: dict[str, str], key: str, default: str | None = None) -> str:
    if key in cfg:
        return cfg[key]
    if default is None:
        raise ConfigError(f"missing config key {key!r}")
    return default


def _get_float(cfg, key, default=None):
    raw = _get(cfg, key, default)
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: not a number: {raw!r}") from None


def _get_int(cfg, key, default=None):
    raw = _get(cfg, key, default)
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: not an integer: {raw!r}") from None


def _get_bool(cfg, key, default):
    raw = _get(cfg, key, default).lower()
    if raw in ("true", "1", "yes"):
        return True
    if raw in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key {key!r}: expected true/false, got {raw!r}")


def _get_formula(raw: str) -> FormulaKind:
    try:
        return FormulaKind(raw.strip().lower())
    except ValueError:
        names = ", ".join(f.value for f in FormulaKind)
        raise ConfigError(f"unknown formula {raw!r}, expected one of: {names}") from None


_GROUP_KEYS = {
    RiskGroup.RISK_NEUTRAL: "neutral",
    RiskGroup.MEDIUM: "medium",
    RiskGroup.RISK_AVERSE: "averse",
}


def _build_thresholds(cfg, config_dir: Path) -> dict[RiskGroup, tuple[float, float]]:
    if "thresholds_file" in cfg:
        path = (config_dir / cfg["thresholds_file"]).resolve()
        if not path.exists():
            raise ConfigError(f"thresholds_file not found: {path}")
        return load_thresholds_csv(path)
    thresholds = {}
    for group, suffix in _GROUP_KEYS.items():
        upper_key, lower_key = f"upper_{suffix}", f"lower_{suffix}"
        if upper_key in cfg or lower_key in cfg:
            thresholds[group] = (
                _get_float(cfg, upper_key),
                _get_float(cfg, lower_key),
            )
    return thresholds


def _build_fleet_config(cfg, config_dir: Path) -> FleetConfig:
    split = {
        RiskGroup.RISK_NEUTRAL: _get_float(cfg, "split_neutral", "0.2"),
        RiskGroup.MEDIUM: _get_float(cfg, "split_medium", "0.6"),
        RiskGroup.RISK_AVERSE: _get_float(cfg, "split_averse", "0.2"),
    }
    if abs(sum(split.values()) - 1.0) > 1e-9:
        raise ConfigError(
            "split_neutral + split_medium + split_averse must sum to 1, got "
            + " + ".join(str(split[g]) for g in RISK_GROUP_ORDER)
        )
    return FleetConfig(
        total_capacity_mw=_get_float(cfg, "total_capacity_mw", "0"),
        split=split,
        thresholds=_build_thresholds(cfg, config_dir),
        cycle_limit_per_day=_get_float(cfg, "cycle_limit", "2.0"),
        publication_delay_min=_get_int(cfg, "delay_min", "2"),
        c_rate=_get_float(cfg, "c_rate", "0.5"),
        round_trip_efficiency=_get_float(cfg, "round_trip_efficiency", "1.0"),
        asset_size_mw=_get_float(cfg, "asset_size_mw", "10"),
    )


def _build_synth_params(cfg) -> SynthParams:
    defaults = SynthParams()
    start_raw = cfg.get("synth_start")
    if start_raw:
        start = datetime.fromisoformat(start_raw.replace("Z", "+00:00"))
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
    else:
        start = defaults.start
    return SynthParams(
        si_mean_mw=_get_float(cfg, "synth_si_mean", str(defaults.si_mean_mw)),
        si_volatility=_get_float(cfg, "synth_si_volatility", str(defaults.si_volatility)),
        si_reversion=_get_float(cfg, "synth_si_reversion", str(defaults.si_reversion)),
        start=start,
        price_jitter=_get_float(cfg, "synth_price_jitter", str(defaults.price_jitter)),
    )


def _build_scenario(cfg, config_dir: Path) -> ScenarioConfig:
    fleet = _build_fleet_config(cfg, config_dir)
    formula = _get_formula(_get(cfg, "formula", "current"))
    ratio_of_sums = _get_bool(cfg, "ratio_of_sums", "true")
    if "si_csv" in cfg and "bids_csv" in cfg:
        return ScenarioConfig(
            formula=formula,
            fleet=fleet,
            si_csv=(config_dir / cfg["si_csv"]).resolve(),
            bids_csv=(config_dir / cfg["bids_csv"]).resolve(),
            ratio_of_sums=ratio_of_sums,
        )
    return ScenarioConfig(
        formula=formula,
        fleet=fleet,
        synth_seed=_get_int(cfg, "seed"),
        synth_days=_get_int(cfg, "synth_days", "365"),
        synth_params=_build_synth_params(cfg),
        ratio_of_sums=ratio_of_sums,
    )


def _effective_hash(cfg: dict[str, str]) -> str:
    canonical = "\n".join(f"{k}={v}" for k, v in sorted(cfg.items()))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _header(cfg) -> str:
    return f"balansim v{__version__} config_sha256={_effective_hash(cfg)}"


def _progress(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _prepend_header(path: Path, header: str) -> None:
    content = path.read_text()
    path.write_text(f"# {header}\n{content}")


def cmd_synth(cfg, config_dir: Path, out_dir: Path, args) -> int:
    seed = _get_int(cfg, "seed")
    days = _get_int(cfg, "synth_days", "365")
    params = _build_synth_params(cfg)
    _progress(f"generating {days} synthetic days with seed {seed}")
    series, ladders = generate_synthetic(seed, days, params)
    si_path = out_dir / "synthetic_si.csv"
    bids_path = out_dir / "synthetic_bids.csv"
    save_si_series(series, si_path)
    save_bid_ladders(ladders, bids_path)
    header = _header(cfg)
    _prepend_header(si_path, header)
    _prepend_header(bids_path, header)
    _progress(f"wrote {si_path} and {bids_path}")
    return 0


def cmd_validate(cfg, config_dir: Path, out_dir: Path, args) -> int:
    si_path = (config_dir / _get(cfg, "si_csv")).resolve()
    bids_path = (config_dir / _get(cfg, "bids_csv")).resolve()
    series = load_si_series(si_path)
    ladders = load_bid_ladders(bids_path)
    print(
        f"{si_path}: {series.n_minutes} minutes, {series.n_isps} ISPs, "
        f"start {series.start.isoformat()}"
    )
    print(
        f"{bids_path}: {len(ladders)} ladders, "
        f"{sum(len(l.all_bids()) for l in ladders)} bids"
    )
    first = ladders[0]
    for key in sorted(first.caps, key=lambda k: (k[0].value, k[1].value)):
        print(f"  first window {key[0].value}-{key[1].value} cap: {first.caps[key]:.1f} MW")
    print("OK")
    return 0


def _calibration_prices(cfg, config_dir: Path) -> np.ndarray:
    source = _get(cfg, "calib_source", "baseline")
    if source == "file":
        path = (config_dir / _get(cfg, "calib_prices_csv")).resolve()
        return load_price_csv(path)
    if source != "baseline":
        raise ConfigError(f"calib_source must be 'baseline' or 'file', got {source!r}")
    baseline = ScenarioConfig(
        formula=_get_formula(_get(cfg, "formula", "current")),
        fleet=FleetConfig(
            total_capacity_mw=0.0, split={RiskGroup.MEDIUM: 1.0}, thresholds={}
        ),
        synth_seed=_get_int(cfg, "calib_seed", cfg.get("seed", "")),
        synth_days=_get_int(cfg, "calib_days", cfg.get("synth_days", "365")),
        synth_params=_build_synth_params(cfg),
        ratio_of_sums=_get_bool(cfg, "ratio_of_sums", "true"),
    )
    _progress(
        f"running zero-fleet baseline for calibration prices (seed {baseline.synth_seed})"
    )
    return run_scenario(baseline).minute_price


def cmd_calibrate(cfg, config_dir: Path, out_dir: Path, args) -> int:
    prices = _calibration_prices(cfg, config_dir)
    step = _get_float(cfg, "calib_step", "25")
    lo = _get_float(cfg, "calib_min", "-200")
    hi = _get_float(cfg, "calib_max", "600")
    candidates = tuple(float(c) for c in np.arange(lo, hi + 0.5 * step, step))
    level = _get_float(cfg, "cvar_level", "0.05")
    valuation = _get(cfg, "calib_valuation", "minute")
    unit_power = _get_float(cfg, "calib_unit_power_mw", "1.0")
    energy = unit_power / _get_float(cfg, "c_rate", "0.5")
    weights = {
        RiskGroup.RISK_NEUTRAL: _get_float(cfg, "w_neutral", "0.0"),
        RiskGroup.MEDIUM: _get_float(cfg, "w_medium", "0.5"),
        RiskGroup.RISK_AVERSE: _get_float(cfg, "w_averse", "0.8"),
    }
    unit = BessAsset(
        power_max_discharge=unit_power,
        power_max_charge=unit_power,
        energy_capacity=energy,
        soc=energy / 2.0,
        cycle_budget_remaining=_get_float(cfg, "cycle_limit", "2.0"),
        upper_threshold=0.0,
        lower_threshold=0.0,
        risk_group=RiskGroup.MEDIUM,
    )
    pairs = [(u, l) for u in candidates for l in candidates if u >= l]
    _progress(f"replaying {len(pairs)} candidate pairs on {len(prices)} minutes")
    means, risks = evaluate_grid(pairs, prices, unit, level=level, valuation=valuation)
    rows: dict[RiskGroup, tuple[float, float, float, float]] = {}
    for group in RISK_GROUP_ORDER:
        upper, lower = select_thresholds(pairs, means, risks, weights[group])
        index = pairs.index((upper, lower))
        rows[group] = (upper, lower, means[index], risks[index])
        _progress(
            f"  {group.value} (w={weights[group]}) -> upper={upper:.1f} lower={lower:.1f}"
        )
    path = out_dir / "thresholds.csv"
    save_thresholds_csv(path, rows)
    _prepend_header(path, _header(cfg))
    _progress(f"wrote {path}")
    return 0


def _sweep_lists(cfg) -> tuple[list[float], list[FormulaKind]]:
    caps_raw = _get(cfg, "capacities_mw", "0,100,200,400,600")
    capacities = [float(c) for c in caps_raw.split(",") if c.strip()]
    formulas_raw = _get(cfg, "formulas", "current,mmsd,wadw")
    formulas = [_get_formula(f) for f in formulas_raw.split(",") if f.strip()]
    return capacities, formulas


def _write_outputs(sweep, out_dir: Path, cfg) -> None:
    header = _header(cfg)
    isp_path = out_dir / "isp_records.csv"
    metrics_path = out_dir / "metrics.csv"
    write_isp_records_csv(isp_path, sweep, header_comment=header)
    write_metrics_csv(metrics_path, summarize_sweep(sweep), header_comment=header)
    _progress(f"wrote {isp_path} and {metrics_path}")


def cmd_run(cfg, config_dir: Path, out_dir: Path, args) -> int:
    scenario = _build_scenario(cfg, config_dir)
    _progress(
        f"running scenario: formula={scenario.formula.value}, "
        f"capacity={scenario.fleet.total_capacity_mw} MW"
    )
    result = run_scenario(scenario)
    sweep = {(scenario.fleet.total_capacity_mw, scenario.formula): result}
    _write_outputs(sweep, out_dir, cfg)
    return 0


def cmd_sweep(cfg, config_dir: Path, out_dir: Path, args) -> int:
    scenario = _build_scenario(cfg, config_dir)
    capacities, formulas = _sweep_lists(cfg)
    jobs = args.jobs or os.cpu_count() or 1
    started = time.perf_counter()
    _progress(
        f"sweeping {len(capacities)} capacities x {len(formulas)} formulas (jobs={jobs})"
    )
    sweep = run_capacity_sweep(scenario, capacities, formulas, jobs=jobs)
    _progress(f"sweep finished in {time.perf_counter() - started:.1f}s")
    _write_outputs(sweep, out_dir, cfg)
    return 0


_COMMANDS = {
    "calibrate": cmd_calibrate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
    "validate": cmd_validate,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="balansim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=None, help="parallel sweep cells")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 64
    try:
        cfg = parse_config_file(args.config)
        if args.seed is not None:
            cfg["seed"] = str(args.seed)
        config_dir = args.config.resolve().parent
        out_dir = args.out if args.out is not None else Path(_get(cfg, "out_dir", "out"))
        if not out_dir.is_absolute():
            out_dir = (Path.cwd() / out_dir).resolve()
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, config_dir, out_dir, args)
    except (ConfigError, DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal invariant violation
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
