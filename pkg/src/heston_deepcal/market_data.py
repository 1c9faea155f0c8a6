"""Option-chain snapshots: loading, validation, train/test partitioning.

A chain lives on disk as two files sharing a stem::

    chain.csv    strike,maturity_days,last_price
    chain.json   {"spot": 6025.99, "rate": 0.043, "as_of": "2025-02-07"}

Maturities are converted to years with ACT/365.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DomainError,
    DuplicateQuote,
    EmptyChain,
    MissingColumn,
    NegativePrice,
    NonPositiveMaturity,
    NonPositiveStrike,
    TooFewQuotes,
    ValidationError,
)

DAYS_PER_YEAR = 365.0
CSV_COLUMNS = ("strike", "maturity_days", "last_price")


@dataclass(frozen=True)
class MarketState:
    spot: float
    rate: float
    as_of: str = "1970-01-01"

    def __post_init__(self):
        if not (math.isfinite(self.spot) and self.spot > 0):
            raise DomainError(f"spot must be positive and finite, got {self.spot!r}")
        if not math.isfinite(self.rate):
            raise DomainError(f"rate must be finite, got {self.rate!r}")
        try:
            _dt.date.fromisoformat(self.as_of)
        except (TypeError, ValueError) as exc:
            raise DomainError(f"as_of is not an ISO-8601 date: {self.as_of!r}") from exc

    def to_dict(self):
        return {"spot": self.spot, "rate": self.rate, "as_of": self.as_of}


@dataclass(frozen=True)
class OptionQuote:
    """A European call quote. ``maturity_days`` is the stored source of truth."""

    strike: float
    maturity_days: float
    last_price: float
    kind: str = "call"

    def __post_init__(self):
        if not (math.isfinite(self.strike) and self.strike > 0):
            raise NonPositiveStrike(f"strike must be positive, got {self.strike!r}")
        if not (math.isfinite(self.maturity_days) and self.maturity_days > 0):
            raise NonPositiveMaturity(f"maturity must be positive, got {self.maturity_days!r} days")
        if not (math.isfinite(self.last_price) and self.last_price >= 0):
            raise NegativePrice(f"last_price must be non-negative, got {self.last_price!r}")
        if self.kind != "call":
            raise ValidationError(f"only calls are supported, got kind={self.kind!r}")

    @classmethod
    def from_years(cls, strike, maturity, last_price):
        return cls(float(strike), float(maturity) * DAYS_PER_YEAR, float(last_price))

    @property
    def maturity(self) -> float:
        return self.maturity_days / DAYS_PER_YEAR

    @property
    def zero_price(self) -> bool:
        return self.last_price <= 1e-12

    def key(self):
        return (self.maturity_days, self.strike)


@dataclass(frozen=True)
class OptionChain:
    state: MarketState
    quotes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        quotes = tuple(sorted(self.quotes, key=OptionQuote.key))
        if not quotes:
            raise EmptyChain("option chain has no quotes")
        for prev, cur in zip(quotes, quotes[1:]):
            if prev.key() == cur.key():
                raise DuplicateQuote(
                    f"duplicate quote at maturity {cur.maturity_days:g} days, strike {cur.strike:g}"
                )
        object.__setattr__(self, "quotes", quotes)

    def __len__(self):
        return len(self.quotes)

    def __iter__(self):
        return iter(self.quotes)

    @property
    def strikes(self) -> np.ndarray:
        return np.array([q.strike for q in self.quotes])

    @property
    def maturities(self) -> np.ndarray:
        return np.array([q.maturity for q in self.quotes])

    @property
    def prices(self) -> np.ndarray:
        return np.array([q.last_price for q in self.quotes])

    @property
    def moneyness(self) -> np.ndarray:
        return np.log(self.state.spot / self.strikes)

    def subset(self, indices: Iterable[int]) -> "OptionChain":
        return OptionChain(self.state, tuple(self.quotes[i] for i in indices))

    def with_prices(self, prices: Sequence[float]) -> "OptionChain":
        if len(prices) != len(self.quotes):
            raise ValidationError("price vector length does not match chain")
        return OptionChain(
            self.state,
            tuple(OptionQuote(q.strike, q.maturity_days, float(p)) for q, p in zip(self.quotes, prices)),
        )

    def maturity_slices(self) -> list["OptionChain"]:
        """One sub-chain per distinct maturity, in ascending order."""
        groups: dict[float, list[OptionQuote]] = {}
        for q in self.quotes:
            groups.setdefault(q.maturity_days, []).append(q)
        return [OptionChain(self.state, tuple(g)) for _, g in sorted(groups.items())]

    def filter(self, max_days=None, min_strike=None, max_strike=None, min_price=None) -> "OptionChain":
        keep = [
            q
            for q in self.quotes
            if (max_days is None or q.maturity_days <= max_days)
            and (min_strike is None or q.strike >= min_strike)
            and (max_strike is None or q.strike <= max_strike)
            and (min_price is None or q.last_price >= min_price)
        ]
        return OptionChain(self.state, tuple(keep))


@dataclass(frozen=True)
class ChainSplit:
    train: OptionChain
    test: OptionChain
    split_spec: dict

    @property
    def test_mask(self) -> np.ndarray:
        return np.asarray(self.split_spec["test_mask"], dtype=bool)


def log_moneyness(spot, strike):
    """ln(spot / strike); works elementwise on arrays."""
    spot_a = np.asarray(spot, dtype=float)
    strike_a = np.asarray(strike, dtype=float)
    if np.any(~(spot_a > 0)) or np.any(~(strike_a > 0)):
        raise DomainError("log_moneyness needs positive spot and strike")
    out = np.log(spot_a / strike_a)
    return float(out) if out.ndim == 0 else out


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".json")


def parse_chain_csv(text: str, meta: dict) -> OptionChain:
    state = MarketState(float(meta["spot"]), float(meta["rate"]), str(meta.get("as_of", "1970-01-01")))
    reader = csv.DictReader(io.StringIO(text))
    header = [h.strip() for h in (reader.fieldnames or [])]
    for col in CSV_COLUMNS:
        if col not in header:
            raise MissingColumn(f"chain CSV lacks required column {col!r} (header: {header})")
    reader.fieldnames = header
    quotes = []
    seen: dict[tuple, int] = {}
    for row_no, row in enumerate(reader, start=1):
        try:
            strike = float(row["strike"])
            days = float(row["maturity_days"])
            price = float(row["last_price"])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"row {row_no}: unparseable number ({exc})") from exc
        if not strike > 0:
            raise NonPositiveStrike(f"strike must be positive, got {row['strike']!r}", row=row_no)
        if not days > 0:
            raise NonPositiveMaturity(f"maturity_days must be positive, got {row['maturity_days']!r}", row=row_no)
        if not price >= 0:
            raise NegativePrice(f"last_price must be non-negative, got {row['last_price']!r}", row=row_no)
        key = (days, strike)
        if key in seen:
            raise DuplicateQuote(
                f"duplicates row {seen[key]} (maturity_days={days:g}, strike={strike:g})", row=row_no
            )
        seen[key] = row_no
        quotes.append(OptionQuote(strike, days, price))
    if not quotes:
        raise EmptyChain("chain CSV has no data rows")
    return OptionChain(state, tuple(quotes))


def load_chain(path, meta_path=None) -> OptionChain:
    """Read a chain CSV and its JSON side-car (default: same stem, ``.json``)."""
    path = Path(path)
    meta_path = Path(meta_path) if meta_path is not None else _meta_path(path)
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("spot", "rate"):
        if key not in meta:
            raise MissingColumn(f"meta file {meta_path} lacks {key!r}")
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_chain_csv(fh.read(), meta)


def format_chain_csv(chain: OptionChain) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for q in chain:
        writer.writerow([repr(q.strike), repr(q.maturity_days), repr(q.last_price)])
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_chain(chain: OptionChain, path, meta_path=None) -> None:
    path = Path(path)
    meta_path = Path(meta_path) if meta_path is not None else _meta_path(path)
    atomic_write_text(path, format_chain_csv(chain))
    atomic_write_text(meta_path, json.dumps(chain.state.to_dict(), indent=2) + "\n")


def split_train_test(chain: OptionChain, test_fraction=0.2, strategy="interleaved", seed=0) -> ChainSplit:
    """Partition quotes into disjoint train and test chains.

    ``interleaved`` sends every k-th quote (k = round(1/test_fraction)) to the
    test set, so test strikes sit between train strikes. ``random`` draws a
    seeded subset of size round(n * test_fraction).
    """
    n = len(chain)
    if n < 5:
        raise TooFewQuotes(f"need at least 5 quotes to split, got {n}")
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    mask = np.zeros(n, dtype=bool)
    if strategy == "interleaved":
        k = max(2, int(round(1.0 / test_fraction)))
        mask[k - 1 :: k] = True
    elif strategy == "random":
        n_test = min(n - 1, max(1, int(round(n * test_fraction))))
        rng = np.random.default_rng(seed)
        mask[rng.choice(n, size=n_test, replace=False)] = True
    else:
        raise ValidationError(f"unknown split strategy {strategy!r}")
    if mask.all() or not mask.any():
        raise TooFewQuotes("split left one side empty")
    spec = {
        "strategy": strategy,
        "test_fraction": test_fraction,
        "seed": seed,
        "test_mask": mask.tolist(),
    }
    return ChainSplit(
        train=chain.subset(np.flatnonzero(~mask)),
        test=chain.subset(np.flatnonzero(mask)),
        split_spec=spec,
    )
