"""Heston option pricing and calibration with neural-network price correction."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .errors import ExtrapolationWarning, HestonDeepCalError, NumericalError, ValidationError
from .heston import (
    DEFAULT_QUAD,
    ChainPricer,
    HestonParams,
    QuadratureConfig,
    SlicePricer,
    bs_call,
    call_price,
    char_fn,
    price_chain,
    risk_neutral_prob,
)
from .hybrid import PipelineConfig, PipelineReport, compute_metrics, run_pipeline, train_ccn, train_pan
from .market_data import MarketState, OptionChain, OptionQuote, load_chain, save_chain, split_train_test
from .mc import McConfig, mc_call_price, mc_call_prices
from .optimizers import (
    CalibrationResult,
    CalibrationWeights,
    DeConfig,
    NmConfig,
    ParamBounds,
    calibrate,
    differential_evolution,
    nelder_mead,
)

__all__ = [
    "BACKEND",
    "CalibrationResult",
    "CalibrationWeights",
    "ChainPricer",
    "DEFAULT_QUAD",
    "DeConfig",
    "ExtrapolationWarning",
    "HestonDeepCalError",
    "HestonParams",
    "MarketState",
    "McConfig",
    "NmConfig",
    "NumericalError",
    "OptionChain",
    "OptionQuote",
    "ParamBounds",
    "PipelineConfig",
    "PipelineReport",
    "QuadratureConfig",
    "SlicePricer",
    "ValidationError",
    "bs_call",
    "calibrate",
    "call_price",
    "char_fn",
    "compute_metrics",
    "differential_evolution",
    "load_chain",
    "mc_call_price",
    "mc_call_prices",
    "nelder_mead",
    "price_chain",
    "risk_neutral_prob",
    "run_pipeline",
    "save_chain",
    "split_train_test",
    "train_ccn",
    "train_pan",
]
