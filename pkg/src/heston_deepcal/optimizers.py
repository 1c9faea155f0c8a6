"""Derivative-free optimizers and the calibration objective.

The objective is the weighted RMSE

    J(eta) = sqrt(sum_q w_q (model_q(eta) - market_q)^2),

with weights normalized to sum to one. Nelder-Mead clamps trial points into
the bounds box; differential evolution resamples out-of-bounds coordinates.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, HestonDeepCalError, ValidationError
from .heston import DEFAULT_QUAD, PARAM_NAMES, ChainPricer, HestonParams, QuadratureConfig
from .market_data import OptionChain

DEFAULT_LOWER = (0.1, 0.001, 0.01, -0.99, 0.001)
DEFAULT_UPPER = (10.0, 1.0, 2.0, 0.99, 1.0)
DEFAULT_START = (2.0, 0.05, 0.5, -0.5, 0.05)


@dataclass(frozen=True)
class ParamBounds:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValidationError("lower and upper bounds must be non-empty and equally long")
        # lower == upper is allowed: it pins that coordinate
        for i, (a, b) in enumerate(zip(lo, hi)):
            if not (math.isfinite(a) and math.isfinite(b) and a <= b):
                raise ValidationError(f"bad bounds on coordinate {i}: [{a}, {b}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def heston_default(cls):
        return cls(DEFAULT_LOWER, DEFAULT_UPPER)

    @classmethod
    def heston(cls, lower, upper):
        b = cls(lower, upper)
        b.check_heston()
        return b

    def check_heston(self):
        if len(self.lower) != 5:
            raise ValidationError("Heston bounds need five coordinates")
        for i, name in enumerate(PARAM_NAMES):
            lo, hi = self.lower[i], self.upper[i]
            if name == "rho":
                if lo < -1.0 or hi > 1.0:
                    raise ValidationError("rho bounds must lie within [-1, 1]")
            elif lo <= 0:
                raise ValidationError(f"{name} lower bound must be positive")

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class CalibrationWeights:
    mode: str = "uniform"
    custom: Optional[tuple] = None
    price_floor: float = 1e-2

    def __post_init__(self):
        if self.mode not in ("uniform", "inverse_price", "custom"):
            raise ValidationError(f"unknown weight mode {self.mode!r}")
        if self.mode == "custom":
            if self.custom is None:
                raise ValidationError("custom weights need values")
            if any(not (w > 0 and math.isfinite(w)) for w in self.custom):
                raise ValidationError("custom weights must be positive")

    def resolve(self, chain: OptionChain, normalize=True) -> np.ndarray:
        n = len(chain)
        if self.mode == "uniform":
            w = np.ones(n)
        elif self.mode == "inverse_price":
            w = 1.0 / np.maximum(chain.prices, self.price_floor)
        else:
            if len(self.custom) != n:
                raise ValidationError(f"{len(self.custom)} custom weights for {n} quotes")
            w = np.asarray(self.custom, dtype=float)
        return w / w.sum() if normalize else w


@dataclass(frozen=True)
class NmConfig:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    max_iters: int = 2000
    x_tol: float = 1e-8
    f_tol: float = 1e-10
    initial_step: float = 0.05

    def __post_init__(self):
        if not (self.expansion > self.reflection > self.contraction > 0):
            raise ValidationError("need expansion > reflection > contraction > 0")
        if not 0 < self.shrink < 1:
            raise ValidationError("shrink must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")


@dataclass(frozen=True)
class DeConfig:
    pop_size: int = 40
    f_weight: float = 0.8
    crossover: float = 0.9
    strategy: str = "best1bin"
    max_gens: int = 300
    tol: float = 1e-8
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.pop_size < 8:
            raise ValidationError(f"pop_size must be >= 8, got {self.pop_size}")
        if not self.f_weight >= 0:
            raise ValidationError("f_weight must be >= 0")
        if not 0.0 <= self.crossover <= 1.0:
            raise ValidationError("crossover must lie in [0, 1]")
        if self.strategy not in ("rand1bin", "best1bin"):
            raise ValidationError(f"unknown DE strategy {self.strategy!r}")
        if self.max_gens < 1:
            raise ValidationError("max_gens must be >= 1")


@dataclass
class CalibrationResult:
    x: np.ndarray
    objective: float
    evaluations: int
    iterations: int
    method: str
    converged: bool
    history: list = field(default_factory=list, repr=False)
    wall_time: float = 0.0

    @property
    def params(self) -> HestonParams:
        return HestonParams.from_array(self.x)

    @property
    def evaluations_per_second(self) -> float:
        return self.evaluations / self.wall_time if self.wall_time > 0 else math.inf

    def to_dict(self, include_timing=False):
        out = {
            "method": self.method,
            "params": dict(zip(PARAM_NAMES, map(float, self.x))) if len(self.x) == 5 else list(map(float, self.x)),
            "objective": float(self.objective),
            "evaluations": int(self.evaluations),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }
        if len(self.x) == 5:
            try:
                out["feller_satisfied"] = self.params.feller_satisfied
            except DomainError:
                pass
        if include_timing:
            out["wall_time_s"] = self.wall_time
        return out


class _Counted:
    """Wraps an objective and counts evaluations."""

    def __init__(self, fn):
        self.fn = fn
        self.count = 0
        self.batch_fn = getattr(fn, "batch", None)

    def __call__(self, x):
        self.count += 1
        return float(self.fn(x))

    def many(self, xs, workers=1):
        xs = np.asarray(xs, dtype=float)
        self.count += len(xs)
        if self.batch_fn is not None:
            return np.asarray(self.batch_fn(xs), dtype=float)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return np.array(list(pool.map(lambda x: float(self.fn(x)), xs)))
        return np.array([float(self.fn(x)) for x in xs])


def make_objective(chain: OptionChain, weights: CalibrationWeights, pricer: Callable, normalize=True):
    """Weighted-RMSE objective over ``chain``.

    ``pricer(params)`` returns model prices for every quote, in chain order.
    Any pricing failure (or an inadmissible parameter vector) yields +inf.
    """
    w = weights.resolve(chain, normalize=normalize)
    market = chain.prices

    def objective(x):
        try:
            model = np.asarray(pricer(HestonParams.from_array(x)), dtype=float)
        except (HestonDeepCalError, FloatingPointError, OverflowError):
            return math.inf
        if not np.all(np.isfinite(model)):
            return math.inf
        return math.sqrt(float(np.sum(w * (model - market) ** 2)))

    objective.weights = w
    return objective


def nelder_mead(objective, start, cfg: NmConfig = NmConfig(), bounds: Optional[ParamBounds] = None) -> CalibrationResult:
    t0 = time.perf_counter()
    fn = _Counted(objective)
    x0 = np.asarray(start, dtype=float)
    n = x0.size
    if bounds is not None:
        if not bounds.contains(x0):
            raise DomainError("start point lies outside the bounds")
        width = bounds.hi - bounds.lo
        clip = bounds.clip
    else:
        width = np.where(x0 != 0, np.abs(x0), 1.0) * 20.0
        clip = lambda v: v  # noqa: E731

    simplex = [x0.copy()]
    for i in range(n):
        v = x0.copy()
        step = cfg.initial_step * width[i]
        v[i] = v[i] + step
        if bounds is not None and v[i] > bounds.upper[i]:
            v[i] = x0[i] - step
        simplex.append(clip(v))
    simplex = np.array(simplex)
    fvals = np.array([fn(v) for v in simplex])

    history = []
    converged = False
    it = 0
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        history.append(float(fvals[0]))
        f_spread = np.max(np.abs(fvals - fvals[0])) if np.isfinite(fvals[0]) else math.inf
        x_spread = np.max(np.abs(simplex - simplex[0]))
        if f_spread <= cfg.f_tol or x_spread <= cfg.x_tol:
            converged = True
            break
        if it >= cfg.max_iters:
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = clip(centroid + cfg.reflection * (centroid - worst))
        fr = fn(xr)
        if fr < fvals[0]:
            xe = clip(centroid + cfg.expansion * (xr - centroid))
            fe = fn(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = clip(centroid + cfg.contraction * (xr - centroid))
            fc = fn(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = clip(centroid + cfg.contraction * (worst - centroid))
            fc = fn(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        best = simplex[0]
        for j in range(1, n + 1):
            simplex[j] = clip(best + cfg.shrink * (simplex[j] - best))
            fvals[j] = fn(simplex[j])

    return CalibrationResult(
        x=simplex[0].copy(),
        objective=float(fvals[0]),
        evaluations=fn.count,
        iterations=it,
        method="nelder_mead",
        converged=converged,
        history=history,
        wall_time=time.perf_counter() - t0,
    )


def de_mutant(a, b, c, f_weight):
    """eta_a + F * (eta_b - eta_c)."""
    return np.asarray(a, dtype=float) + f_weight * (np.asarray(b, dtype=float) - np.asarray(c, dtype=float))


def differential_evolution(objective, bounds: ParamBounds, cfg: DeConfig = DeConfig()) -> CalibrationResult:
    """Synchronous DE: a whole generation of trials is built, then evaluated, then selected."""
    t0 = time.perf_counter()
    fn = _Counted(objective)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = bounds.lo, bounds.hi
    dim, npop = bounds.dim, cfg.pop_size
    pop = lo + rng.random((npop, dim)) * (hi - lo)
    fit = fn.many(pop, cfg.workers)
    history = []
    converged = False
    gen = 0
    idx = np.arange(npop)
    while True:
        best = int(np.argmin(fit))
        history.append(float(fit[best]))
        finite = fit[np.isfinite(fit)]
        spread = float(finite.max() - finite.min()) if finite.size == npop else math.inf
        if spread <= cfg.tol * (1.0 + abs(fit[best])):
            converged = True
            break
        if gen >= cfg.max_gens:
            break
        gen += 1
        trials = np.empty_like(pop)
        for i in range(npop):
            if cfg.strategy == "best1bin":
                others = idx[(idx != i) & (idx != best)]
                b, c = rng.choice(others, size=2, replace=False)
                a = best
            else:
                a, b, c = rng.choice(idx[idx != i], size=3, replace=False)
            mutant = de_mutant(pop[a], pop[b], pop[c], cfg.f_weight)
            cross = rng.random(dim) < cfg.crossover
            cross[rng.integers(dim)] = True
            trial = np.where(cross, mutant, pop[i])
            out = (trial < lo) | (trial > hi)
            if out.any():
                trial[out] = lo[out] + rng.random(int(out.sum())) * (hi[out] - lo[out])
            trials[i] = trial
        trial_fit = fn.many(trials, cfg.workers)
        better = trial_fit <= fit
        pop[better] = trials[better]
        fit[better] = trial_fit[better]

    best = int(np.argmin(fit))
    return CalibrationResult(
        x=pop[best].copy(),
        objective=float(fit[best]),
        evaluations=fn.count,
        iterations=gen,
        method=f"de_{cfg.strategy}",
        converged=converged,
        history=history,
        wall_time=time.perf_counter() - t0,
    )


def calibrate(
    chain: OptionChain,
    method="de",
    bounds: Optional[ParamBounds] = None,
    weights: CalibrationWeights = CalibrationWeights(),
    cfg=None,
    quad: QuadratureConfig = DEFAULT_QUAD,
    start=None,
    pricer=None,
) -> CalibrationResult:
    """Fit Heston parameters to ``chain`` with Nelder-Mead or differential evolution."""
    bounds = bounds or ParamBounds.heston_default()
    bounds.check_heston()
    pricer = pricer if pricer is not None else ChainPricer(chain, quad)
    objective = make_objective(chain, weights, pricer)
    t0 = time.perf_counter()
    if method in ("de", "differential_evolution"):
        result = differential_evolution(objective, bounds, cfg or DeConfig())
    elif method in ("nm", "nelder_mead"):
        x0 = bounds.clip(np.asarray(start if start is not None else DEFAULT_START, dtype=float))
        result = nelder_mead(objective, x0, cfg or NmConfig(), bounds)
    else:
        raise ValidationError(f"unknown calibration method {method!r}")
    result.wall_time = time.perf_counter() - t0
    return result
