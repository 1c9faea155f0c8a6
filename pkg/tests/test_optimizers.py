import math
import time

import numpy as np
import pytest

from heston_deepcal.errors import DomainError, ValidationError
from heston_deepcal.heston import ChainPricer, HestonParams
from heston_deepcal.market_data import MarketState, OptionChain, OptionQuote
from heston_deepcal.optimizers import (
    CalibrationWeights,
    DeConfig,
    NmConfig,
    ParamBounds,
    calibrate,
    de_mutant,
    differential_evolution,
    make_objective,
    nelder_mead,
)
from heston_deepcal.synthetic import heston_chain

TRUE = HestonParams(1.8, 0.05, 0.45, -0.6, 0.035)
STATE = MarketState(100.0, 0.02)


def rosenbrock5(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2 + float(np.sum(np.asarray(x[2:]) ** 2))


def sphere(x):
    return float(np.sum(np.asarray(x) ** 2))


@pytest.fixture(scope="module")
def chain10():
    return heston_chain(TRUE, STATE, 120, np.linspace(80, 120, 10))


@pytest.fixture(scope="module")
def chain20():
    return heston_chain(TRUE, STATE, 120, np.linspace(75, 125, 20))


def test_bounds_validation():
    with pytest.raises(ValidationError):
        ParamBounds((1.0,), (0.5,))
    with pytest.raises(ValidationError):
        ParamBounds.heston((0.1, 0.001, 0.01, -1.5, 0.001), (10, 1, 2, 0.99, 1))
    with pytest.raises(ValidationError):
        ParamBounds.heston((0.0, 0.001, 0.01, -0.5, 0.001), (10, 1, 2, 0.99, 1))
    b = ParamBounds.heston_default()
    assert b.contains(TRUE.as_array())
    assert np.array_equal(b.clip([20, 0, 0, 2, 0.5]), [10, 0.001, 0.01, 0.99, 0.5])


def test_weights():
    chain = OptionChain(STATE, tuple(OptionQuote(k, 30, p) for k, p in ((90, 12.0), (100, 4.0), (110, 0.0))))
    assert CalibrationWeights().resolve(chain) == pytest.approx([1 / 3] * 3)
    inv = CalibrationWeights("inverse_price", price_floor=0.5).resolve(chain, normalize=False)
    assert inv.tolist() == [1 / 12, 1 / 4, 2.0]
    with pytest.raises(ValidationError):
        CalibrationWeights("custom", (1.0, -1.0))
    with pytest.raises(ValidationError):
        CalibrationWeights("custom", (1.0, 2.0)).resolve(chain)


def test_objective_arithmetic(chain10):
    exact = make_objective(chain10, CalibrationWeights(), lambda p: chain10.prices)
    assert exact(TRUE.as_array()) == 0.0
    one = OptionChain(STATE, (OptionQuote(100, 30, 5.0),))
    assert make_objective(one, CalibrationWeights(), lambda p: np.array([8.0]))(TRUE.as_array()) == 3.0


def test_objective_on_generated_chain(chain10):
    obj = make_objective(chain10, CalibrationWeights(), ChainPricer(chain10))
    assert obj(TRUE.as_array()) < 1e-8
    bumped = TRUE.as_array() * np.array([1.0, 1.05, 1.0, 1.0, 1.0])
    assert obj(bumped) > obj(TRUE.as_array())
    # inadmissible parameters map to +inf instead of raising
    assert obj(np.array([-1.0, 0.04, 0.3, -0.5, 0.04])) == math.inf


def test_objective_weight_scaling(chain10):
    pricer = ChainPricer(chain10)
    x = TRUE.as_array() * 1.1
    w = tuple(np.linspace(1, 2, 10))
    base = make_objective(chain10, CalibrationWeights("custom", w), pricer, normalize=False)
    scaled = make_objective(chain10, CalibrationWeights("custom", tuple(4 * v for v in w)), pricer, normalize=False)
    assert scaled(x) == pytest.approx(2 * base(x), rel=1e-14)

    bounds = ParamBounds((-5,) * 3, (5,) * 3)
    weights = np.array([1.0, 2.0, 3.0])

    def quad(scale):
        return lambda v: math.sqrt(float(np.sum(scale * weights * (np.asarray(v) - 1) ** 2)))

    cfg = DeConfig(pop_size=12, max_gens=40, seed=2)
    a = differential_evolution(quad(1.0), bounds, cfg)
    b = differential_evolution(quad(4.0), bounds, cfg)
    assert np.array_equal(a.x, b.x)
    assert b.history == pytest.approx([2 * h for h in a.history], rel=1e-14)


def test_nm_quadratic():
    f = lambda x: (x[0] - 1) ** 2 + float(np.sum(np.asarray(x[1:]) ** 2))  # noqa: E731
    bounds = ParamBounds((-10,) * 5, (10,) * 5)
    res = nelder_mead(f, [3, 2, -1, 0.5, 4], NmConfig(x_tol=1e-10, f_tol=1e-16, max_iters=5000), bounds)
    assert np.max(np.abs(res.x - [1, 0, 0, 0, 0])) < 1e-6


def test_nm_rosenbrock():
    t0 = time.perf_counter()
    res = nelder_mead(rosenbrock5, [-1.2, 1.0, 0.0, 0.0, 0.0], NmConfig(max_iters=20_000, x_tol=1e-12, f_tol=1e-16))
    assert res.objective < 1e-8
    assert time.perf_counter() - t0 < 10
    assert all(a >= b for a, b in zip(res.history, res.history[1:]))


def test_nm_constant_objective():
    res = nelder_mead(lambda x: 7.0, [1, 1, 1, 1, 1])
    assert res.converged and res.iterations == 0


def test_nm_clamps_to_bounds():
    bounds = ParamBounds((0,) * 2, (1,) * 2)
    res = nelder_mead(lambda x: float((x[0] - 3) ** 2 + (x[1] + 2) ** 2), [0.5, 0.5], NmConfig(), bounds)
    assert bounds.contains(res.x)
    assert res.x == pytest.approx([1.0, 0.0], abs=1e-6)
    with pytest.raises(DomainError):
        nelder_mead(sphere, [2.0, 0.0], NmConfig(), bounds)


def test_de_mutant_formula():
    assert de_mutant((1, 1), (2, 0), (0, 2), 0.5).tolist() == [2.0, 0.0]


@pytest.mark.parametrize("strategy", ["rand1bin", "best1bin"])
def test_de_sphere(strategy):
    bounds = ParamBounds((-5,) * 5, (5,) * 5)
    t0 = time.perf_counter()
    res = differential_evolution(sphere, bounds, DeConfig(pop_size=40, f_weight=0.8, crossover=0.9, strategy=strategy, max_gens=200, tol=0, seed=0))
    assert res.objective < 1e-6
    assert res.iterations <= 200
    assert time.perf_counter() - t0 < 10
    assert all(a >= b for a, b in zip(res.history, res.history[1:]))
    assert bounds.contains(res.x)


def test_de_determinism():
    bounds = ParamBounds((-5,) * 3, (5,) * 3)
    cfg = DeConfig(pop_size=10, max_gens=30, seed=9)
    a = differential_evolution(rosenbrock5, ParamBounds((-2,) * 5, (2,) * 5), cfg)
    b = differential_evolution(rosenbrock5, ParamBounds((-2,) * 5, (2,) * 5), cfg)
    assert a.history == b.history and np.array_equal(a.x, b.x)
    c = differential_evolution(sphere, bounds, DeConfig(pop_size=10, max_gens=30, seed=9, workers=3))
    d = differential_evolution(sphere, bounds, DeConfig(pop_size=10, max_gens=30, seed=9, workers=1))
    assert c.history == d.history


def test_de_batch_objective_used():
    calls = []

    def f(x):
        return sphere(x)

    def batch(xs):
        calls.append(len(xs))
        return np.sum(np.asarray(xs) ** 2, axis=1)

    f.batch = batch
    res = differential_evolution(f, ParamBounds((-1,) * 2, (1,) * 2), DeConfig(pop_size=8, max_gens=5, tol=0))
    assert calls == [8] * 6
    assert res.evaluations == 48


@pytest.fixture(scope="module")
def de_result(chain20):
    return calibrate(chain20, "de", cfg=DeConfig(seed=0))


def test_calibrate_de_self_recovery(de_result):
    res = de_result
    assert res.objective < 1e-2
    assert res.wall_time < 300
    assert ParamBounds.heston_default().contains(res.x)


def test_calibrate_nm_from_perturbed_start(chain20, de_result):
    de = de_result
    nm = calibrate(chain20, "nm", start=TRUE.as_array() * 1.2)
    assert nm.objective <= 10 * de.objective
    assert nm.method == "nelder_mead"


def test_calibrate_collapsed_box(chain10):
    point = tuple(TRUE.as_array())
    res = calibrate(chain10, "de", ParamBounds.heston(point, point), cfg=DeConfig(pop_size=8, max_gens=3))
    assert np.array_equal(res.x, TRUE.as_array())
    assert res.objective < 1e-8


def test_calibrate_unknown_method(chain10):
    with pytest.raises(ValidationError):
        calibrate(chain10, "bfgs")


def test_result_dict(chain10):
    res = calibrate(chain10, "nm", start=TRUE.as_array(), cfg=NmConfig(max_iters=5))
    doc = res.to_dict()
    assert set(doc) >= {"method", "params", "objective", "evaluations", "iterations", "converged"}
    assert "wall_time_s" not in doc and "wall_time_s" in res.to_dict(include_timing=True)
