"""Semi-analytic European call pricing under the Heston model.

The characteristic function of ln S_T under the risk-neutral measure is
``exp(i phi (ln S + r tau) + C(tau, phi) + D(tau, phi) v0)``, and

    call = S P1 - K exp(-r tau) P2,
    P_j  = 1/2 + 1/pi * int_0^inf Re[exp(-i phi ln K) psi_j(phi)] dphi,

with psi_1 = f(phi - i) / (i phi f(-i)) and psi_2 = f(phi) / (i phi). The
integrals are evaluated with fixed-node Gauss-Legendre quadrature on
``[lower_offset, upper_limit]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from . import _kernels
from .errors import DomainError, NumericalOverflow, PricingError, QuadratureFailure
from .market_data import MarketState, OptionChain

PARAM_NAMES = ("kappa", "theta", "sigma", "rho", "v0")


@dataclass(frozen=True)
class HestonParams:
    """Model parameters (kappa, theta, sigma, rho, v0).

    ``relaxed=True`` admits zeros in kappa/theta/sigma/v0; only the Monte
    Carlo oracle accepts such degenerate sets.
    """

    kappa: float
    theta: float
    sigma: float
    rho: float
    v0: float
    relaxed: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        for name in ("kappa", "theta", "sigma", "v0"):
            value = getattr(self, name)
            if value < 0 or (value == 0 and not self.relaxed):
                raise DomainError(f"{name} must be positive, got {value!r}")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError(f"rho must lie in [-1, 1], got {self.rho!r}")

    @classmethod
    def degenerate(cls, kappa, theta, sigma, rho, v0):
        return cls(kappa, theta, sigma, rho, v0, relaxed=True)

    @classmethod
    def from_array(cls, x):
        return cls(*(float(v) for v in x))

    def as_array(self) -> np.ndarray:
        return np.array([self.kappa, self.theta, self.sigma, self.rho, self.v0])

    def to_dict(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @property
    def feller_satisfied(self) -> bool:
        return 2.0 * self.kappa * self.theta > self.sigma ** 2


@dataclass(frozen=True)
class QuadratureConfig:
    upper_limit: float = 200.0
    nodes: int = 1000
    lower_offset: float = 1e-8

    def __post_init__(self):
        if self.nodes < 64:
            raise DomainError(f"quadrature needs at least 64 nodes, got {self.nodes}")
        if not (self.upper_limit > self.lower_offset > 0):
            raise DomainError("need upper_limit > lower_offset > 0")


DEFAULT_QUAD = QuadratureConfig()


@dataclass(frozen=True)
class RiccatiTerms:
    c_term: complex
    d_term: complex


@lru_cache(maxsize=16)
def _gl_rule(lower, upper, n):
    t, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (upper - lower)
    nodes = half * t + 0.5 * (upper + lower)
    weights = half * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def quadrature_rule(quad: QuadratureConfig = DEFAULT_QUAD):
    return _gl_rule(quad.lower_offset, quad.upper_limit, quad.nodes)


def riccati_terms(phi, tau, params: HestonParams) -> RiccatiTerms:
    if tau < 0:
        raise DomainError(f"tau must be non-negative, got {tau}")
    c, d = _kernels.riccati_cd(
        np.array([complex(phi)]), tau, params.kappa, params.theta, params.sigma, params.rho
    )
    c, d = complex(c[0]), complex(d[0])
    if not (np.isfinite(c) and np.isfinite(d)):
        raise NumericalOverflow(f"Riccati terms overflow at phi={phi}, tau={tau}")
    return RiccatiTerms(c, d)


def char_fn(phi, state: MarketState, params: HestonParams, tau) -> complex:
    """Risk-neutral characteristic function of ln S_tau."""
    terms = riccati_terms(phi, tau, params)
    drift = math.log(state.spot) + state.rate * tau
    exponent = 1j * complex(phi) * drift + terms.c_term + terms.d_term * params.v0
    if exponent.real > 700:
        raise NumericalOverflow(f"characteristic function overflows at phi={phi}")
    return complex(np.exp(exponent))


def _check_tau(tau):
    if not (math.isfinite(tau) and tau > 0):
        raise DomainError(f"tau must be positive, got {tau}")


def _integrands(params: HestonParams, tau, quad: QuadratureConfig):
    nodes, weights = quadrature_rule(quad)
    psi1, psi2 = _kernels.p_integrands(
        nodes, tau, params.kappa, params.theta, params.sigma, params.rho, params.v0
    )
    if not (np.all(np.isfinite(psi1)) and np.all(np.isfinite(psi2))):
        raise NumericalOverflow(
            f"non-finite integrand (tau={tau}, upper_limit={quad.upper_limit}); reduce the upper limit"
        )
    return nodes, weights, psi1, psi2


def _clamp_probability(p, which):
    p = np.asarray(p, dtype=float)
    bad = (p < -1e-9) | (p > 1.0 + 1e-9) | ~np.isfinite(p)
    if np.any(bad):
        raise QuadratureFailure(
            f"P{which} = {p[bad][0]!r} lies outside [0, 1]; increase nodes or upper_limit"
        )
    return np.clip(p, 0.0, 1.0)


class SlicePricer:
    """Prices a fixed strike set at one maturity, reusing the Fourier basis.

    The trigonometric basis cos/sin(phi * ln(F/K)) depends only on the strike
    grid, so calibration loops build this once and then pay only for the
    characteristic-function evaluation per parameter set.
    """

    def __init__(self, strikes, state: MarketState, tau, quad: QuadratureConfig = DEFAULT_QUAD):
        _check_tau(tau)
        self.strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
        if np.any(~(self.strikes > 0)):
            raise DomainError("strikes must be positive")
        self.state = state
        self.tau = float(tau)
        self.quad = quad
        nodes, weights = quadrature_rule(quad)
        y = math.log(state.spot) + state.rate * tau - np.log(self.strikes)
        arg = np.outer(y, nodes)
        self._cos = np.cos(arg) * (weights / math.pi)
        self._sin = np.sin(arg) * (weights / math.pi)
        self.discount = math.exp(-state.rate * tau)

    def probabilities(self, params: HestonParams):
        _, _, psi1, psi2 = _integrands(params, self.tau, self.quad)
        p1 = 0.5 + self._cos @ psi1.real - self._sin @ psi1.imag
        p2 = 0.5 + self._cos @ psi2.real - self._sin @ psi2.imag
        return _clamp_probability(p1, 1), _clamp_probability(p2, 2)

    def prices(self, params: HestonParams) -> np.ndarray:
        p1, p2 = self.probabilities(params)
        return self.state.spot * p1 - self.strikes * self.discount * p2


def risk_neutral_prob(j, strike, state: MarketState, params: HestonParams, tau, quad=DEFAULT_QUAD) -> float:
    if j not in (1, 2):
        raise DomainError(f"j must be 1 or 2, got {j}")
    if not strike > 0:
        raise DomainError(f"strike must be positive, got {strike}")
    p1, p2 = SlicePricer([strike], state, tau, quad).probabilities(params)
    return float((p1 if j == 1 else p2)[0])


def call_price(strike, state: MarketState, params: HestonParams, tau, quad=DEFAULT_QUAD) -> float:
    if not strike > 0:
        raise DomainError(f"strike must be positive, got {strike}")
    return float(SlicePricer([strike], state, tau, quad).prices(params)[0])


def bs_call(strike, state: MarketState, vol, tau) -> float:
    """Black-Scholes call price."""
    if not vol > 0:
        raise DomainError(f"vol must be positive, got {vol}")
    if not strike > 0:
        raise DomainError(f"strike must be positive, got {strike}")
    _check_tau(tau)
    s, r = state.spot, state.rate
    srt = vol * math.sqrt(tau)
    d1 = (math.log(s / strike) + (r + 0.5 * vol * vol) * tau) / srt
    d2 = d1 - srt
    return float(s * ndtr(d1) - strike * math.exp(-r * tau) * ndtr(d2))


class ChainPricer:
    """Model prices for every quote of a chain, one :class:`SlicePricer` per maturity."""

    def __init__(self, chain: OptionChain, quad: QuadratureConfig = DEFAULT_QUAD):
        self.chain = chain
        self.quad = quad
        mats = chain.maturities
        self._slices = []
        for tau in np.unique(mats):
            idx = np.flatnonzero(mats == tau)
            self._slices.append((idx, SlicePricer(chain.strikes[idx], chain.state, tau, quad)))

    def __call__(self, params: HestonParams) -> np.ndarray:
        out = np.empty(len(self.chain))
        for idx, pricer in self._slices:
            out[idx] = pricer.prices(params)
        return out


def price_chain(chain: OptionChain, params: HestonParams, quad=DEFAULT_QUAD):
    """List of (quote, model_price) in chain order.

    Failures are collected per quote and raised together as PricingError.
    """
    try:
        prices = ChainPricer(chain, quad)(params)
        return list(zip(chain.quotes, prices.tolist()))
    except (NumericalOverflow, QuadratureFailure):
        pass
    out, failures = [], []
    for i, q in enumerate(chain.quotes):
        try:
            out.append((q, call_price(q.strike, chain.state, params, q.maturity, quad)))
        except (NumericalOverflow, QuadratureFailure) as exc:
            failures.append((i, q.strike, q.maturity, exc))
    if failures:
        raise PricingError(failures)
    return out
