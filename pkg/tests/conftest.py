import numpy as np
import pytest

from heston_deepcal.heston import HestonParams
from heston_deepcal.market_data import MarketState

# the reference configuration used throughout: pricer/MC agreement and
# quadrature convergence checks
REF_PARAMS = HestonParams(kappa=2.0, theta=0.04, sigma=0.3, rho=-0.7, v0=0.04)
REF_STATE = MarketState(spot=100.0, rate=0.03)
REF_TAU = 0.5
REF_STRIKES = np.array([80.0, 90.0, 100.0, 110.0, 120.0])


@pytest.fixture
def ref_params():
    return REF_PARAMS


@pytest.fixture
def ref_state():
    return REF_STATE


def write_chain(tmp_path, text, spot=100.0, rate=0.01, name="chain.csv"):
    path = tmp_path / name
    path.write_text(text)
    path.with_suffix(".json").write_text(f'{{"spot": {spot}, "rate": {rate}, "as_of": "2024-03-01"}}')
    return path


@pytest.fixture(scope="session")
def surrogate_data():
    from heston_deepcal.surrogate import SamplingSpec, gen_synthetic

    return gen_synthetic(SamplingSpec())


@pytest.fixture(scope="session")
def trained_surrogate(surrogate_data):
    """Default-architecture surrogate on 10^4 uniform samples, seed 0."""
    from heston_deepcal.surrogate import train_surrogate

    model, _ = train_surrogate(surrogate_data)
    return model


ACCEPTANCE_LOG = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LOG.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LOG):
        terminalreporter.write_line(line)
