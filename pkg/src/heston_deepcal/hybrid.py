"""Two-network price correction on top of a classical Heston calibration.

The price approximator (PAN, 1-8-8-1, tanh then relu) regresses last traded
price on strike and yields a smooth reference curve. The correction network
(CCN, 1-7-7-1, sigmoid then tanh) maps calibrated Heston prices onto that
reference. :func:`run_pipeline` runs the whole experiment on one maturity
slice and reports RMSE/MAE/MRE for both the plain and corrected prices.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyInput, HestonDeepCalError, LengthMismatch, TooFewQuotes, ValidationError
from .heston import DEFAULT_QUAD, ChainPricer, QuadratureConfig
from .market_data import OptionChain, atomic_write_text, split_train_test
from .micronet import (
    Dataset,
    Network,
    Scaler,
    TrainConfig,
    build_network,
    mse_loss,
    network_from_dict,
    network_to_dict,
    predict,
    train,
)
from .optimizers import CalibrationResult, CalibrationWeights, DeConfig, NmConfig, ParamBounds, calibrate

PAN_DIMS = (1, 8, 8, 1)
PAN_ACTIVATIONS = ("identity", "tanh", "relu")
CCN_DIMS = (1, 7, 7, 1)
CCN_ACTIVATIONS = ("identity", "sigmoid", "tanh")
FULL_BATCH = 1 << 30
DEFAULT_NET_TRAIN = TrainConfig(optimizer="adam", lr=1e-2, batch_size=FULL_BATCH, epochs=5000, seed=0)

REPORT_SCHEMA = "heston-deepcal-pipeline-report"
REPORT_VERSION = 1
TABLE_ROWS = ("Train RMSE", "Train MRE", "Train MAE", "Test RMSE", "Test MRE", "Test MAE")


@dataclass
class ScaledRegressor:
    """A 1-in/1-out network wrapped in input and output z-score scalers."""

    net: Network
    in_scaler: Scaler
    out_scaler: Scaler

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        return self.out_scaler.inverse(predict(self.net, self.in_scaler.transform(x)[:, None]))

    def to_dict(self):
        doc = network_to_dict(self.net)
        doc["meta"] = dict(doc["meta"], in_scaler=self.in_scaler.to_dict(), out_scaler=self.out_scaler.to_dict())
        return doc

    @classmethod
    def from_dict(cls, doc):
        net = network_from_dict(doc)
        return cls(net, Scaler.from_dict(net.meta["in_scaler"]), Scaler.from_dict(net.meta["out_scaler"]))


class PanModel(ScaledRegressor):
    pass


@dataclass
class CcnModel(ScaledRegressor):
    # set when the trained net failed to beat the uncorrected input on its own
    # training data; the model then returns its input unchanged
    passthrough: bool = False
    # residual models learn reference - input and add it back, so the
    # identity map is exactly representable (zero net output)
    residual: bool = True

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if self.passthrough:
            return x.copy()
        out = super().__call__(x)
        return x + out if self.residual else out

    def to_dict(self):
        doc = super().to_dict()
        doc["meta"]["passthrough"] = self.passthrough
        doc["meta"]["residual"] = self.residual
        return doc

    @classmethod
    def from_dict(cls, doc):
        base = ScaledRegressor.from_dict(doc)
        meta = base.net.meta
        return cls(base.net, base.in_scaler, base.out_scaler,
                   bool(meta.get("passthrough", False)), bool(meta.get("residual", False)))


def build_pan(seed=0) -> PanModel:
    return PanModel(build_network(PAN_DIMS, PAN_ACTIVATIONS, seed), Scaler.identity(), Scaler.identity())


def build_ccn(seed=0, residual=True) -> CcnModel:
    return CcnModel(build_network(CCN_DIMS, CCN_ACTIVATIONS, seed), Scaler.identity(), Scaler.identity(),
                    residual=residual)


def _fit_regressor(model: ScaledRegressor, x, y, cfg: TrainConfig):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    model.in_scaler = Scaler.fit(x)
    model.out_scaler = Scaler.fit(y)
    data = Dataset(model.in_scaler.transform(x)[:, None], model.out_scaler.transform(y))
    model.net, history = train(model.net, data, cfg)
    return history


def train_pan(train_chain: OptionChain, cfg: TrainConfig = DEFAULT_NET_TRAIN, seed=0) -> PanModel:
    """Fit strike -> last price on a single maturity slice."""
    if len(train_chain) < 5:
        raise TooFewQuotes(f"PAN needs at least 5 quotes, got {len(train_chain)}")
    if len(set(train_chain.maturities.tolist())) != 1:
        raise ValidationError("PAN trains on one maturity slice at a time")
    model = build_pan(seed)
    _fit_regressor(model, train_chain.strikes, train_chain.prices, cfg)
    return model


def pan_curve(model: PanModel, strikes) -> np.ndarray:
    return model(strikes)


def train_ccn(model_prices, reference, cfg: TrainConfig = DEFAULT_NET_TRAIN, seed=0, residual=True) -> CcnModel:
    """Learn Heston price -> reference price on aligned training points."""
    x = np.asarray(model_prices, dtype=float).ravel()
    y = np.asarray(reference, dtype=float).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"{x.size} model prices but {y.size} reference prices")
    if x.size < 5:
        raise TooFewQuotes(f"CCN needs at least 5 points, got {x.size}")
    model = build_ccn(seed, residual)
    _fit_regressor(model, x, y - x if residual else y, cfg)
    if mse_loss(model(x), y) > mse_loss(x, y):
        model.passthrough = True
    return model


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    mre: float
    n: int
    excluded_zero_price: int

    def to_dict(self):
        return asdict(self)


def compute_metrics(model_prices, market_prices) -> MetricsReport:
    model = np.asarray(model_prices, dtype=float).ravel()
    market = np.asarray(market_prices, dtype=float).ravel()
    if model.size != market.size:
        raise LengthMismatch(f"{model.size} model prices but {market.size} market prices")
    if model.size == 0:
        raise EmptyInput("no prices to compare")
    err = model - market
    # scale before squaring so tiny residuals do not underflow below the MAE
    scale = float(np.max(np.abs(err)))
    rmse = scale * math.sqrt(float(np.mean((err / scale) ** 2))) if scale > 0 else 0.0
    mae = float(np.mean(np.abs(err)))
    nonzero = market > 1e-12
    excluded = int(np.count_nonzero(~nonzero))
    mre = float(np.mean(np.abs(err[nonzero]) / market[nonzero])) if nonzero.any() else math.nan
    return MetricsReport(rmse, mae, mre, int(model.size), excluded)


@dataclass(frozen=True)
class PipelineConfig:
    test_fraction: float = 0.2
    split_strategy: str = "interleaved"
    split_seed: int = 0
    method: str = "de"
    de: DeConfig = DeConfig(pop_size=40, max_gens=300, seed=0)
    nm: NmConfig = NmConfig()
    bounds: ParamBounds = field(default_factory=ParamBounds.heston_default)
    weights: CalibrationWeights = CalibrationWeights()
    quad: QuadratureConfig = DEFAULT_QUAD
    pan: TrainConfig = DEFAULT_NET_TRAIN
    ccn: TrainConfig = DEFAULT_NET_TRAIN
    pan_seed: int = 0
    ccn_seed: int = 1
    ccn_target: str = "pan"
    ccn_residual: bool = True

    def __post_init__(self):
        if self.ccn_target not in ("pan", "market"):
            raise ValidationError(f"ccn_target must be 'pan' or 'market', got {self.ccn_target!r}")

    def to_dict(self):
        return {
            "split": {"test_fraction": self.test_fraction, "strategy": self.split_strategy, "seed": self.split_seed},
            "calibration": {
                "method": self.method,
                "de": asdict(self.de),
                "nm": asdict(self.nm),
                "bounds": self.bounds.to_dict(),
                "weights": self.weights.mode,
            },
            "quadrature": asdict(self.quad),
            "pan": asdict(self.pan),
            "ccn": asdict(self.ccn),
            "pan_seed": self.pan_seed,
            "ccn_seed": self.ccn_seed,
            "ccn_target": self.ccn_target,
            "ccn_residual": self.ccn_residual,
        }


@dataclass
class PipelineReport:
    traditional: dict
    deep_learning: dict
    calibration: CalibrationResult
    ccn_applied: bool
    metadata: dict
    curves: dict = field(repr=False, default_factory=dict)

    def table(self) -> dict:
        out = {}
        for split in ("train", "test"):
            for metric in ("RMSE", "MRE", "MAE"):
                key = f"{split.capitalize()} {metric}"
                out[key] = {
                    "traditional": getattr(self.traditional[split], metric.lower()),
                    "deep_learning": getattr(self.deep_learning[split], metric.lower()),
                }
        return out

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "version": REPORT_VERSION,
            "table": self.table(),
            "traditional": {k: v.to_dict() for k, v in self.traditional.items()},
            "deep_learning": {k: v.to_dict() for k, v in self.deep_learning.items()},
            "calibration": self.calibration.to_dict(include_timing=False),
            "ccn_applied": self.ccn_applied,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def curves_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["strike", "series", "value"])
        for series in ("market", "heston", "pan", "corrected"):
            for k, v in zip(self.curves["strike"], self.curves[series]):
                writer.writerow([repr(float(k)), series, repr(float(v))])
        return buf.getvalue()

    def save(self, report_path, curves_path=None):
        atomic_write_text(report_path, self.to_json())
        if curves_path is not None:
            atomic_write_text(curves_path, self.curves_csv())


class StageError(HestonDeepCalError):
    def __init__(self, stage, exc):
        self.stage = stage
        self.cause = exc
        super().__init__(f"pipeline stage {stage!r} failed: {exc}")


def run_pipeline(chain: OptionChain, cfg: PipelineConfig = PipelineConfig()) -> PipelineReport:
    """Split, calibrate, fit PAN and CCN, and score both methods against market prices."""
    if len(set(chain.maturities.tolist())) != 1:
        raise ValidationError("run_pipeline handles one maturity slice; use run_pipeline_slices")

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except HestonDeepCalError as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(name, exc) from exc

    split = stage("split", split_train_test, chain, cfg.test_fraction, cfg.split_strategy, cfg.split_seed)
    method_cfg = cfg.de if cfg.method in ("de", "differential_evolution") else cfg.nm
    calib = stage(
        "calibrate", calibrate, split.train, cfg.method, cfg.bounds, cfg.weights, method_cfg, cfg.quad
    )
    heston_all = stage("price", lambda: ChainPricer(chain, cfg.quad)(calib.params))
    test_mask = split.test_mask
    train_mask = ~test_mask
    market = chain.prices

    pan = stage("pan", train_pan, split.train, cfg.pan, cfg.pan_seed)
    pan_all = pan(chain.strikes)
    target = pan_all[train_mask] if cfg.ccn_target == "pan" else market[train_mask]
    ccn = stage("ccn", train_ccn, heston_all[train_mask], target, cfg.ccn, cfg.ccn_seed, cfg.ccn_residual)
    corrected = ccn(heston_all)
    # keep the correction only if it fits the training quotes better than
    # plain Heston prices do
    ccn_applied = not ccn.passthrough and (
        compute_metrics(corrected[train_mask], market[train_mask]).rmse
        < compute_metrics(heston_all[train_mask], market[train_mask]).rmse
    )
    if not ccn_applied:
        corrected = heston_all.copy()

    traditional = {
        "train": compute_metrics(heston_all[train_mask], market[train_mask]),
        "test": compute_metrics(heston_all[test_mask], market[test_mask]),
    }
    deep = {
        "train": compute_metrics(corrected[train_mask], market[train_mask]),
        "test": compute_metrics(corrected[test_mask], market[test_mask]),
    }
    metadata = {
        "spot": chain.state.spot,
        "rate": chain.state.rate,
        "as_of": chain.state.as_of,
        "maturity_days": chain.quotes[0].maturity_days,
        "n_quotes": len(chain),
        "n_train": int(train_mask.sum()),
        "n_test": int(test_mask.sum()),
        "config": cfg.to_dict(),
    }
    curves = {
        "strike": chain.strikes,
        "market": market,
        "heston": heston_all,
        "pan": pan_all,
        "corrected": corrected,
        "test_mask": test_mask,
    }
    return PipelineReport(traditional, deep, calib, bool(ccn_applied), metadata, curves)


def run_pipeline_slices(chain: OptionChain, cfg: PipelineConfig = PipelineConfig()) -> list:
    return [run_pipeline(s, cfg) for s in chain.maturity_slices()]
