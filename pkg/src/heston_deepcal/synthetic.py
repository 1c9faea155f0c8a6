"""Synthetic option chains priced by the Heston model, optionally misspecified."""
from __future__ import annotations

import numpy as np

from .heston import DEFAULT_QUAD, HestonParams, SlicePricer
from .market_data import DAYS_PER_YEAR, MarketState, OptionChain, OptionQuote


def smile_bump(spot, strikes, amplitude=0.02):
    """Additive price perturbation, ``amplitude * spot`` at the extreme strikes.

    Quadratic in log-moneyness, zero at the money; a smooth smile-shaped
    distortion that a single Heston parameter set cannot reproduce exactly.
    """
    m = np.log(spot / np.asarray(strikes, dtype=float))
    span = np.max(np.abs(m))
    if span == 0:
        return np.zeros_like(m)
    return amplitude * spot * (m / span) ** 2


def heston_chain(
    params: HestonParams,
    state: MarketState,
    maturity_days,
    strikes,
    bump_amplitude=0.0,
    quad=DEFAULT_QUAD,
) -> OptionChain:
    strikes = np.asarray(strikes, dtype=float)
    tau = maturity_days / DAYS_PER_YEAR
    prices = SlicePricer(strikes, state, tau, quad).prices(params)
    if bump_amplitude:
        prices = prices + smile_bump(state.spot, strikes, bump_amplitude)
    prices = np.maximum(prices, 0.0)
    return OptionChain(state, tuple(OptionQuote(float(k), float(maturity_days), float(p)) for k, p in zip(strikes, prices)))


DEMO_PARAMS = HestonParams(kappa=2.0, theta=0.04, sigma=0.5, rho=-0.7, v0=0.04)
DEMO_STATE = MarketState(spot=100.0, rate=0.02, as_of="2024-01-02")
DEMO_DAYS = 183
DEMO_STRIKES = np.linspace(70.0, 130.0, 41)
DEMO_BUMP = 0.02


def demo_chain(bump_amplitude=DEMO_BUMP) -> OptionChain:
    """The bundled synthetic market: 41 strikes, one maturity, 2% smile bump."""
    return heston_chain(DEMO_PARAMS, DEMO_STATE, DEMO_DAYS, DEMO_STRIKES, bump_amplitude)
