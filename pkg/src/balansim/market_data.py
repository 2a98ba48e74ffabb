"""Domain types and ingestion for the exogenous balancing-market inputs.

Covers the per-minute system imbalance series, the balancing-energy bid
ladders (aFRR/mFRR, both directions), and a deterministic synthetic
generator used for tests and desk-scale experiments.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MINUTES_PER_ISP = 15
MINUTES_PER_DAY = 1440

SI_CSV_HEADER = ("timestamp", "si_mw")
BID_CSV_HEADER = (
    "window_start",
    "product",
    "direction",
    "price_eur_mwh",
    "capacity_mw",
    "bid_id",
)


class DataError(ValueError):
    """Base class for invalid input data."""


class ParseError(DataError):
    """Malformed file contents (bad header, row, enum or number)."""


class MissingMinute(DataError):
    """Gap in a minute-resolution series."""


class MisalignedStart(DataError):
    """Series does not start on an ISP boundary (quarter hour)."""


class NegativeCapacity(DataError):
    """Bid with non-positive capacity."""


class OverlappingWindows(DataError):
    """Two bid ladders claim the same validity window."""


class InvalidParams(DataError):
    """Synthetic-generator parameters out of range."""


class Product(Enum):
    AFRR = "AFRR"
    MFRR = "MFRR"


class Direction(Enum):
    UP = "UP"
    DOWN = "DOWN"


@dataclass(frozen=True, slots=True)
class Bid:
    """One balancing-energy bid: fixed product, direction, price and size."""

    bid_id: str
    product: Product
    direction: Direction
    price: float  # EUR/MWh, may be negative
    capacity: float  # MW offered

    def __post_init__(self) -> None:
        if not self.capacity > 0:
            raise NegativeCapacity(
                f"bid {self.bid_id!r}: capacity must be > 0 MW, got {self.capacity}"
            )


def _merit_key(bid: Bid) -> tuple:
    # Up: cheapest first. Down: highest price first (most attractive
    # decremental energy). Price ties break on bid_id for determinism.
    if bid.direction is Direction.UP:
        return (bid.price, bid.bid_id)
    return (-bid.price, bid.bid_id)


@dataclass(frozen=True)
class BidLadder:
    """Merit-ordered bids valid over a half-open time window.

    ``window_end`` of ``None`` means "until superseded by the next ladder".
    Groups are keyed by (product, direction) and sorted in activation order.
    """

    window_start: datetime
    window_end: datetime | None
    groups: dict[tuple[Product, Direction], tuple[Bid, ...]]
    caps: dict[tuple[Product, Direction], float] = field(compare=False, repr=False)
    bids_by_id: dict[str, Bid] = field(compare=False, repr=False)

    @classmethod
    def from_bids(
        cls,
        window_start: datetime,
        window_end: datetime | None,
        bids: Iterable[Bid],
    ) -> "BidLadder":
        groups: dict[tuple[Product, Direction], list[Bid]] = {}
        by_id: dict[str, Bid] = {}
        for bid in bids:
            groups.setdefault((bid.product, bid.direction), []).append(bid)
            if bid.bid_id in by_id:
                raise ParseError(f"duplicate bid_id {bid.bid_id!r} in one window")
            by_id[bid.bid_id] = bid
        sorted_groups = {
            key: tuple(sorted(group, key=_merit_key)) for key, group in groups.items()
        }
        caps = {
            key: sum(b.capacity for b in group) for key, group in sorted_groups.items()
        }
        return cls(window_start, window_end, sorted_groups, caps, by_id)

    def bids(self, product: Product, direction: Direction) -> tuple[Bid, ...]:
        return self.groups.get((product, direction), ())

    def cap(self, product: Product, direction: Direction) -> float:
        return self.caps.get((product, direction), 0.0)

    def all_bids(self) -> list[Bid]:
        return [b for group in self.groups.values() for b in group]

    def value_of_additional_activation(self, direction: Direction) -> float | None:
        """Best available bid price in a direction, across aFRR and mFRR.

        Upward: the cheapest incremental bid. Downward: the first bid in
        the downward merit order, i.e. the highest decremental price.
        """
        prices = [
            group[0].price
            for (_, d), group in self.groups.items()
            if d is direction and group
        ]
        if not prices:
            return None
        return min(prices) if direction is Direction.UP else max(prices)


@dataclass(frozen=True, slots=True)
class MinuteIndex:
    """Position of a minute inside the ISP grid (15 minutes per ISP)."""

    isp: int  # 0-based ISP ordinal
    minute_in_isp: int  # 1..15

    def __post_init__(self) -> None:
        if not 1 <= self.minute_in_isp <= MINUTES_PER_ISP:
            raise ValueError(f"minute_in_isp must be in [1, 15], got {self.minute_in_isp}")
        if self.isp < 0:
            raise ValueError(f"isp ordinal must be >= 0, got {self.isp}")

    @classmethod
    def from_absolute(cls, minute: int) -> "MinuteIndex":
        return cls(minute // MINUTES_PER_ISP, minute % MINUTES_PER_ISP + 1)

    def to_absolute(self) -> int:
        return self.isp * MINUTES_PER_ISP + self.minute_in_isp - 1


@dataclass(frozen=True, eq=False)
class SystemImbalanceSeries:
    """Gap-free per-minute system imbalance, positive = system surplus."""

    start: datetime
    values: np.ndarray  # MW, float64, length divisible by 15

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if self.start.tzinfo is None:
            raise MisalignedStart("series start must be timezone-aware (UTC)")
        if self.start.second or self.start.microsecond or self.start.minute % 15:
            raise MisalignedStart(
                f"series must start on an ISP boundary, got {self.start.isoformat()}"
            )
        if arr.ndim != 1 or len(arr) == 0:
            raise DataError("series must be a non-empty 1-d sequence")
        if len(arr) % MINUTES_PER_ISP:
            raise DataError(
                f"series length {len(arr)} is not a whole number of ISPs"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SystemImbalanceSeries):
            return NotImplemented
        return self.start == other.start and np.array_equal(self.values, other.values)

    @property
    def n_minutes(self) -> int:
        return len(self.values)

    @property
    def n_isps(self) -> int:
        return len(self.values) // MINUTES_PER_ISP

    def timestamp(self, minute: int) -> datetime:
        return self.start + timedelta(minutes=minute)

    def minute_index(self, minute: int) -> MinuteIndex:
        return MinuteIndex.from_absolute(minute)


def _parse_timestamp(text: str, path: Path, line: int) -> datetime:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ParseError(f"{path}:{line}: bad timestamp {text!r}: {exc}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_float(text: str, path: Path, line: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{path}:{line}: bad {col} value {text!r}") from None
    if not np.isfinite(value):
        raise ParseError(f"{path}:{line}: non-finite {col} value {text!r}")
    return value


def _read_csv_rows(path: Path, header: Sequence[str]) -> list[tuple[int, list[str]]]:
    if not path.exists():
        raise FileNotFoundError(path)
    rows: list[tuple[int, list[str]]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header_seen = False
        for line_no, row in enumerate(reader, start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if not header_seen:
                if [c.strip() for c in row] != list(header):
                    raise ParseError(
                        f"{path}:{line_no}: expected header {','.join(header)!r}"
                    )
                header_seen = True
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line_no}: expected {len(header)} columns")
            rows.append((line_no, row))
    if not header_seen:
        raise ParseError(f"{path}: empty file, expected header {','.join(header)!r}")
    return rows


def load_si_series(path: str | Path) -> SystemImbalanceSeries:
    """Load a system-imbalance CSV (``timestamp,si_mw``) into a series.

    The file must be gap-free at one-minute resolution and start on an
    ISP boundary; gaps raise :class:`MissingMinute`, a misaligned first
    row raises :class:`MisalignedStart`.
    """
    path = Path(path)
    rows = _read_csv_rows(path, SI_CSV_HEADER)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    start = _parse_timestamp(rows[0][1][0], path, rows[0][0])
    values = np.empty(len(rows))
    expected = start
    for i, (line_no, row) in enumerate(rows):
        ts = _parse_timestamp(row[0], path, line_no)
        if ts != expected:
            raise MissingMinute(
                f"{path}:{line_no}: expected {expected.isoformat()}, got {ts.isoformat()}"
            )
        values[i] = _parse_float(row[1], path, line_no, "si_mw")
        expected += timedelta(minutes=1)
    return SystemImbalanceSeries(start=start, values=values)


def save_si_series(series: SystemImbalanceSeries, path: str | Path) -> None:
    """Write a series back to the CSV schema accepted by ``load_si_series``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SI_CSV_HEADER)
        for i, value in enumerate(series.values):
            writer.writerow([series.timestamp(i).isoformat(), repr(float(value))])


def load_bid_ladders(path: str | Path) -> list[BidLadder]:
    """Load bid ladders from CSV, one ladder per run of ``window_start``.

    Window starts must be strictly increasing through the file; a window
    appearing twice raises :class:`OverlappingWindows`. Each ladder stays
    valid until the next one starts (the last one is open-ended).
    """
    path = Path(path)
    rows = _read_csv_rows(path, BID_CSV_HEADER)
    if not rows:
        raise ParseError(f"{path}: no data rows")

    runs: list[tuple[datetime, list[Bid]]] = []
    current_start: datetime | None = None
    for line_no, (start, bid) in _iter_bid_rows(rows, path):
        if current_start is None or start != current_start:
            # Runs must be strictly increasing; a start at or before the
            # previous run either duplicates or overlaps an earlier window.
            if runs and start <= runs[-1][0]:
                raise OverlappingWindows(
                    f"{path}:{line_no}: window {start.isoformat()} repeats or overlaps"
                )
            runs.append((start, []))
            current_start = start
        runs[-1][1].append(bid)

    ladders: list[BidLadder] = []
    for i, (start, bids) in enumerate(runs):
        end = runs[i + 1][0] if i + 1 < len(runs) else None
        ladders.append(BidLadder.from_bids(start, end, bids))
    return ladders


def _iter_bid_rows(
    rows: list[tuple[int, list[str]]], path: Path
) -> Iterable[tuple[int, tuple[datetime, Bid]]]:
    for line_no, row in rows:
        start = _parse_timestamp(row[0], path, line_no)
        try:
            product = Product(row[1].strip().upper())
            direction = Direction(row[2].strip().upper())
        except ValueError:
            raise ParseError(
                f"{path}:{line_no}: unknown product/direction {row[1]!r}/{row[2]!r}"
            ) from None
        price = _parse_float(row[3], path, line_no, "price_eur_mwh")
        capacity = _parse_float(row[4], path, line_no, "capacity_mw")
        bid = Bid(row[5].strip(), product, direction, price, capacity)
        yield line_no, (start, bid)


_GROUP_ORDER = (
    (Product.AFRR, Direction.UP),
    (Product.AFRR, Direction.DOWN),
    (Product.MFRR, Direction.UP),
    (Product.MFRR, Direction.DOWN),
)


def save_bid_ladders(ladders: Sequence[BidLadder], path: str | Path) -> None:
    """Write ladders in canonical order (window, group, merit position)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BID_CSV_HEADER)
        for ladder in ladders:
            for key in _GROUP_ORDER:
                for bid in ladder.groups.get(key, ()):
                    writer.writerow(
                        [
                            ladder.window_start.isoformat(),
                            bid.product.value,
                            bid.direction.value,
                            repr(bid.price),
                            repr(bid.capacity),
                            bid.bid_id,
                        ]
                    )


@dataclass(frozen=True)
class SynthParams:
    """Parameters of the synthetic world (mean-reverting SI + bid ladders).

    The defaults are tuned so a multi-week run populates all three price
    regions (|SI| < 25, 25-150, > 150 MW). ``si_volatility`` is the
    per-minute innovation scale in MW; ``si_reversion`` the pull toward
    ``si_mean_mw`` per minute. Ladder templates are (price, capacity)
    steps per product and direction; each ISP gets an independently
    jittered copy.
    """

    si_mean_mw: float = 0.0
    si_volatility: float = 30.0
    si_reversion: float = 0.05
    si_daily_bias_mw: float = 40.0  # std of a per-day mean offset (regime days)
    si_daily_vol_sigma: float = 0.7  # lognormal sigma of a per-day volatility factor
    start: datetime = datetime(2023, 1, 1, tzinfo=timezone.utc)
    afrr_up: tuple[tuple[float, float], ...] = (
        (55.0, 50.0), (70.0, 50.0), (95.0, 50.0), (130.0, 50.0), (175.0, 50.0)
    )
    afrr_down: tuple[tuple[float, float], ...] = (
        (45.0, 50.0), (35.0, 50.0), (22.0, 50.0), (8.0, 50.0), (-10.0, 50.0)
    )
    mfrr_up: tuple[tuple[float, float], ...] = (
        (190.0, 70.0), (215.0, 70.0), (240.0, 70.0), (265.0, 70.0), (290.0, 70.0)
    )
    mfrr_down: tuple[tuple[float, float], ...] = (
        (-10.0, 70.0), (-20.0, 70.0), (-32.0, 70.0), (-45.0, 70.0), (-60.0, 70.0)
    )
    price_jitter: float = 5.0

    def __post_init__(self) -> None:
        if self.si_volatility < 0:
            raise InvalidParams(f"si_volatility must be >= 0, got {self.si_volatility}")
        if self.si_daily_bias_mw < 0:
            raise InvalidParams(
                f"si_daily_bias_mw must be >= 0, got {self.si_daily_bias_mw}"
            )
        if self.si_daily_vol_sigma < 0:
            raise InvalidParams(
                f"si_daily_vol_sigma must be >= 0, got {self.si_daily_vol_sigma}"
            )
        if not 0 <= self.si_reversion <= 1:
            raise InvalidParams(f"si_reversion must be in [0, 1], got {self.si_reversion}")
        if self.price_jitter < 0:
            raise InvalidParams(f"price_jitter must be >= 0, got {self.price_jitter}")
        for name in ("afrr_up", "afrr_down", "mfrr_up", "mfrr_down"):
            steps = getattr(self, name)
            if len(steps) < 2:
                raise InvalidParams(f"{name}: need at least 2 price steps, got {len(steps)}")
            if any(cap <= 0 for _, cap in steps):
                raise InvalidParams(f"{name}: capacities must be > 0")


_TEMPLATE_KEYS = (
    ("afrr_up", Product.AFRR, Direction.UP, "aU"),
    ("afrr_down", Product.AFRR, Direction.DOWN, "aD"),
    ("mfrr_up", Product.MFRR, Direction.UP, "mU"),
    ("mfrr_down", Product.MFRR, Direction.DOWN, "mD"),
)


def generate_synthetic(
    seed: int, days: int, params: SynthParams | None = None
) -> tuple[SystemImbalanceSeries, list[BidLadder]]:
    """Deterministically generate one SI series and per-ISP bid ladders.

    The imbalance follows a mean-reverting random walk; ladders repeat the
    configured price steps with per-ISP price jitter. Same seed, same output.
    """
    if days < 1:
        raise InvalidParams(f"days must be >= 1, got {days}")
    params = params or SynthParams()
    rng = np.random.default_rng(seed)
    n = days * MINUTES_PER_DAY

    si = np.empty(n)
    sigma = params.si_daily_vol_sigma
    # mean-one lognormal day factors: calm and wild days around the base
    # level; the per-day bias scales with the same factor, so calm days are
    # calm in both drift and noise.
    vol_factors = np.exp(rng.normal(0.0, sigma, size=days) - 0.5 * sigma * sigma)
    biases = rng.normal(0.0, params.si_daily_bias_mw, size=days) * vol_factors
    noise = rng.standard_normal(n) * params.si_volatility
    level = params.si_mean_mw
    pull = params.si_reversion
    for t in range(n):
        day = t // MINUTES_PER_DAY
        mean = params.si_mean_mw + biases[day]
        level = level + pull * (mean - level) + noise[t] * vol_factors[day]
        si[t] = level
    series = SystemImbalanceSeries(start=params.start, values=si)

    n_isps = n // MINUTES_PER_ISP
    jitter = params.price_jitter
    ladders: list[BidLadder] = []
    for k in range(n_isps):
        start = params.start + timedelta(minutes=MINUTES_PER_ISP * k)
        end = start + timedelta(minutes=MINUTES_PER_ISP) if k + 1 < n_isps else None
        bids: list[Bid] = []
        for attr, product, direction, prefix in _TEMPLATE_KEYS:
            for i, (price, cap) in enumerate(getattr(params, attr)):
                shift = rng.uniform(-jitter, jitter) if jitter else 0.0
                bids.append(Bid(f"{prefix}{i}", product, direction, price + shift, cap))
        ladders.append(BidLadder.from_bids(start, end, bids))
    return series, ladders


def ladder_for_minute(
    ladders: Sequence[BidLadder], timestamp: datetime
) -> BidLadder:
    """Ladder in effect at ``timestamp`` (latest window started before it)."""
    chosen: BidLadder | None = None
    for ladder in ladders:
        if ladder.window_start <= timestamp:
            chosen = ladder
        else:
            break
    if chosen is None:
        raise DataError(f"no bid ladder in effect at {timestamp.isoformat()}")
    return chosen
