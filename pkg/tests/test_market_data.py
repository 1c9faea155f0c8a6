import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from heston_deepcal.errors import (
    DomainError,
    DuplicateQuote,
    EmptyChain,
    MissingColumn,
    NegativePrice,
    NonPositiveMaturity,
    NonPositiveStrike,
    TooFewQuotes,
)
from heston_deepcal.market_data import (
    MarketState,
    OptionChain,
    OptionQuote,
    format_chain_csv,
    load_chain,
    log_moneyness,
    parse_chain_csv,
    save_chain,
    split_train_test,
)

from conftest import write_chain

META = {"spot": 100.0, "rate": 0.01, "as_of": "2024-03-01"}


def _chain(n, days=30.0):
    state = MarketState(100.0, 0.01)
    return OptionChain(state, tuple(OptionQuote(80.0 + 2 * i, days, 10.0 / (i + 1)) for i in range(n)))


def test_load_three_rows_sorted(tmp_path):
    path = write_chain(tmp_path, "strike,maturity_days,last_price\n110,91.25,1.5\n90,91.25,11.0\n100,91.25,5.0\n")
    chain = load_chain(path)
    assert len(chain) == 3
    assert chain.strikes.tolist() == [90.0, 100.0, 110.0]
    assert np.allclose(chain.maturities, 0.25)
    assert chain.state.spot == 100.0


def test_negative_strike_names_row():
    text = "strike,maturity_days,last_price\n90,30,11\n-5,30,1\n"
    with pytest.raises(NonPositiveStrike, match="row 2"):
        parse_chain_csv(text, META)


def test_duplicate_quote():
    text = "strike,maturity_days,last_price\n100,91.25,5\n100,91.25,5.1\n"
    with pytest.raises(DuplicateQuote, match="row 2"):
        parse_chain_csv(text, META)


@pytest.mark.parametrize(
    "text, exc",
    [
        ("strike,maturity_days\n100,30\n", MissingColumn),
        ("strike,maturity_days,last_price\n100,30,-1\n", NegativePrice),
        ("strike,maturity_days,last_price\n100,0,1\n", NonPositiveMaturity),
        ("strike,maturity_days,last_price\n", EmptyChain),
    ],
)
def test_validation_errors(text, exc):
    with pytest.raises(exc):
        parse_chain_csv(text, META)


def test_zero_price_loaded_and_flagged():
    chain = parse_chain_csv("strike,maturity_days,last_price\n100,30,0\n", META)
    assert chain.quotes[0].zero_price


def test_round_trip(tmp_path):
    chain = _chain(7)
    path = tmp_path / "c.csv"
    save_chain(chain, path)
    again = load_chain(path)
    assert again == chain
    assert format_chain_csv(again) == format_chain_csv(chain)


def test_market_state_validation():
    with pytest.raises(DomainError):
        MarketState(0.0, 0.01)
    with pytest.raises(DomainError):
        MarketState(100.0, 0.01, "not-a-date")
    assert MarketState(100.0, -0.005).rate == -0.005


def test_log_moneyness_values():
    assert log_moneyness(100, 100) == 0.0
    assert log_moneyness(100, 50) == pytest.approx(math.log(2), abs=1e-15)
    assert log_moneyness(6025.99, 6000) == pytest.approx(math.log(6025.99 / 6000), rel=1e-15)
    with pytest.raises(DomainError):
        log_moneyness(100, 0)
    with pytest.raises(DomainError):
        log_moneyness(-1, 100)


@given(st.floats(1e-3, 1e6), st.floats(1e-3, 1e6))
def test_log_moneyness_antisymmetric(a, b):
    assert log_moneyness(a, a) == 0.0
    assert log_moneyness(a, b) == pytest.approx(-log_moneyness(b, a), abs=1e-12)


def test_interleaved_split_positions():
    split = split_train_test(_chain(10), 0.2, "interleaved")
    assert np.flatnonzero(split.test_mask).tolist() == [4, 9]
    assert len(split.train) == 8 and len(split.test) == 2


def test_random_split_deterministic():
    a = split_train_test(_chain(20), 0.25, "random", seed=7)
    b = split_train_test(_chain(20), 0.25, "random", seed=7)
    assert a.test_mask.tolist() == b.test_mask.tolist()
    c = split_train_test(_chain(20), 0.25, "random", seed=8)
    assert a.test_mask.tolist() != c.test_mask.tolist()


def test_split_too_few():
    with pytest.raises(TooFewQuotes):
        split_train_test(_chain(4), 0.2)
    # every 20th quote of 5 leaves the test side empty
    with pytest.raises(TooFewQuotes):
        split_train_test(_chain(5), 0.05)


@given(st.integers(5, 60), st.floats(0.05, 0.6), st.sampled_from(["interleaved", "random"]), st.integers(0, 100))
def test_split_partitions_chain(n, frac, strategy, seed):
    if strategy == "interleaved":
        assume(max(2, round(1 / frac)) <= n)
    chain = _chain(n)
    split = split_train_test(chain, frac, strategy, seed)
    assert len(split.train) > 0 and len(split.test) > 0
    assert sorted(split.train.quotes + split.test.quotes, key=OptionQuote.key) == list(chain.quotes)


def test_maturity_slices_and_filter():
    state = MarketState(100.0, 0.0)
    quotes = [OptionQuote(k, d, 1.0) for d in (3.0, 39.0) for k in (95.0, 100.0, 105.0)]
    chain = OptionChain(state, tuple(reversed(quotes)))
    slices = chain.maturity_slices()
    assert [s.quotes[0].maturity_days for s in slices] == [3.0, 39.0]
    assert len(chain.filter(max_days=3)) == 3
    assert chain.filter(min_strike=100, max_strike=100).strikes.tolist() == [100.0, 100.0]
