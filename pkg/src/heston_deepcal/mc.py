"""Monte Carlo Heston simulator used as an independent pricing oracle.

Paths are split into fixed-size blocks. Each draw comes from a counter-based
generator (splitmix64 finalizer over ``key + (counter + 1) * golden``), so
every path's shocks depend only on (seed, path index, step). Block results are
merged in index order, so estimates are identical for any thread count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, ValidationError
from .heston import HestonParams
from .market_data import MarketState

BLOCK_PATHS = 8192
THREADS_ENV = "HESTON_DEEPCAL_THREADS"


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 200_000
    n_steps: int = 200
    seed: int = 0
    scheme: str = "euler_full_truncation"

    def __post_init__(self):
        if self.n_paths < 1000:
            raise ValidationError(f"n_paths must be >= 1000, got {self.n_paths}")
        if self.n_steps < 10:
            raise ValidationError(f"n_steps must be >= 10, got {self.n_steps}")
        if self.scheme != "euler_full_truncation":
            raise ValidationError(f"unsupported scheme {self.scheme!r}")


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_paths: int

    def contains(self, x, n_se=3.0) -> bool:
        return abs(x - self.value) <= n_se * self.std_error


def terminal_log_spot(state: MarketState, params: HestonParams, tau, cfg: McConfig, threads=None) -> np.ndarray:
    """Simulated ln S_tau for every path, in path order."""
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    key = _kernels.seed_key(cfg.seed)
    starts = list(range(0, cfg.n_paths, BLOCK_PATHS))
    args = (
        math.log(state.spot),
        state.rate,
        params.kappa,
        params.theta,
        params.sigma,
        params.rho,
        params.v0,
        float(tau),
        cfg.n_steps,
        key,
    )

    def run(start):
        return _kernels.simulate_log_spot(*args, start, min(BLOCK_PATHS, cfg.n_paths - start))

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(starts) == 1:
        blocks = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, starts))
    return np.concatenate(blocks)


def _mean_se(samples) -> McEstimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    mean = float(samples.mean())
    if np.ptp(samples) == 0.0:
        se = 0.0
    else:
        se = float(samples.std(ddof=1) / math.sqrt(n))
    return McEstimate(mean, se, n)


def mc_call_prices(strikes, state, params, tau, cfg: McConfig, threads=None) -> list[McEstimate]:
    """Discounted-payoff estimates for several strikes from one set of paths."""
    s_t = np.exp(terminal_log_spot(state, params, tau, cfg, threads))
    disc = math.exp(-state.rate * tau)
    return [_mean_se(disc * np.maximum(s_t - k, 0.0)) for k in np.atleast_1d(strikes)]


def mc_call_price(strike, state, params, tau, cfg: McConfig, threads=None) -> McEstimate:
    return mc_call_prices([strike], state, params, tau, cfg, threads)[0]


def mc_itm_probabilities(strike, state, params, tau, cfg: McConfig, threads=None):
    """(share-measure, risk-neutral) probabilities of finishing above ``strike``.

    The share-measure probability E[S 1{S>K}] / E[S] is a ratio estimator; its
    standard error comes from the delta method.
    """
    s_t = np.exp(terminal_log_spot(state, params, tau, cfg, threads))
    itm = (s_t > strike).astype(float)
    p2 = _mean_se(itm)
    num, den = s_t * itm, s_t
    ratio = num.mean() / den.mean()
    resid = (num - ratio * den) / den.mean()
    p1 = McEstimate(float(ratio), float(resid.std(ddof=1) / math.sqrt(s_t.size)), s_t.size)
    return p1, p2


def mc_char_fn(phi, state, params, tau, cfg: McConfig, threads=None):
    """Sample mean of exp(i phi ln S_tau) and per-component standard errors."""
    x = terminal_log_spot(state, params, tau, cfg, threads)
    angle = float(phi) * x
    re, im = _mean_se(np.cos(angle)), _mean_se(np.sin(angle))
    return complex(re.value, im.value), re.std_error, im.std_error


def mc_discounted_spot(state, params, tau, cfg: McConfig, threads=None) -> McEstimate:
    """Estimate of E[exp(-r tau) S_tau]; equals the spot for a martingale scheme."""
    s_t = np.exp(terminal_log_spot(state, params, tau, cfg, threads))
    return _mean_se(math.exp(-state.rate * tau) * s_t)
