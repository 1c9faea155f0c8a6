"""Surrogate pricing network: synthetic data, training, and calibration through it.

Inputs are (kappa, theta, sigma, rho, v0, maturity, log-moneyness) and the
target is the call price at unit spot, i.e. the currency price divided by
spot, with strike ``exp(-m)``. A single trained surrogate therefore serves
every spot level.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ExtrapolationWarning,
    HestonDeepCalError,
    LengthMismatch,
    MissingColumn,
    NumericalError,
    TooManyFailures,
    ValidationError,
)
from .heston import DEFAULT_QUAD, PARAM_NAMES, HestonParams, QuadratureConfig, SlicePricer
from .market_data import MarketState, OptionChain, atomic_write_text
from .micronet import (
    ACTIVATIONS,
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
from .optimizers import (
    CalibrationResult,
    CalibrationWeights,
    DeConfig,
    ParamBounds,
    differential_evolution,
)

FEATURES = PARAM_NAMES + ("maturity", "moneyness")
DATASET_COLUMNS = FEATURES + ("price",)
MAX_FAILURE_FRACTION = 0.01
# quadrature round-off on deep out-of-the-money rows can land slightly below zero
NEGATIVE_TOLERANCE = 1e-9
INFERENCE_BLOCK_ROWS = 1024

SURROGATE_DIMS = (7, 32, 32, 1)
SURROGATE_ACTIVATIONS = ("identity", "relu", "relu")
SURROGATE_TRAIN = TrainConfig(optimizer="adam", lr=2e-3, batch_size=64, epochs=300, seed=0)

# narrower than the calibration box: the network only has to be accurate
# where it will be queried
SURROGATE_LOWER = (0.5, 0.01, 0.1, -0.95, 0.01)
SURROGATE_UPPER = (5.0, 0.2, 1.0, 0.0, 0.2)


def default_surrogate_bounds() -> ParamBounds:
    return ParamBounds.heston(SURROGATE_LOWER, SURROGATE_UPPER)


@dataclass(frozen=True)
class SamplingSpec:
    bounds: ParamBounds = field(default_factory=default_surrogate_bounds)
    maturity_range: tuple = (0.1, 1.0)
    moneyness_range: tuple = (-0.3, 0.3)
    n_samples: int = 10_000
    scheme: str = "uniform_random"
    seed: int = 0
    rate: float = 0.0
    # grid scheme only: points per axis; yields grid_points ** 7 rows
    grid_points: int = 3

    def __post_init__(self):
        if self.scheme not in ("uniform_random", "grid"):
            raise ValidationError(f"unknown sampling scheme {self.scheme!r}")
        self.bounds.check_heston()
        for name, (lo, hi) in (("maturity_range", self.maturity_range), ("moneyness_range", self.moneyness_range)):
            if not lo < hi:
                raise ValidationError(f"{name} must satisfy min < max, got {lo}, {hi}")
        if not self.maturity_range[0] > 0:
            raise ValidationError("maturities must be positive")
        if self.scheme == "uniform_random" and self.n_samples < 100:
            raise ValidationError(f"n_samples must be >= 100, got {self.n_samples}")
        if self.scheme == "grid" and self.grid_points < 2:
            raise ValidationError("grid_points must be >= 2")
        if not math.isfinite(self.rate):
            raise ValidationError("rate must be finite")

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([self.bounds.lo, [self.maturity_range[0], self.moneyness_range[0]]])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([self.bounds.hi, [self.maturity_range[1], self.moneyness_range[1]]])

    @property
    def rows(self) -> int:
        return self.grid_points ** len(FEATURES) if self.scheme == "grid" else self.n_samples

    def to_dict(self):
        return {
            "bounds": self.bounds.to_dict(),
            "maturity_range": list(self.maturity_range),
            "moneyness_range": list(self.moneyness_range),
            "n_samples": self.n_samples,
            "scheme": self.scheme,
            "seed": self.seed,
            "rate": self.rate,
            "grid_points": self.grid_points,
        }


@dataclass(frozen=True)
class SurrogateSample:
    eta: HestonParams
    maturity: float
    moneyness: float
    price: float


@dataclass
class SyntheticDataset:
    """Feature matrix (n x 7, columns FEATURES) and normalized prices."""

    inputs: np.ndarray
    prices: np.ndarray
    failures: int = 0
    rate: float = 0.0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, len(FEATURES))
        self.prices = np.asarray(self.prices, dtype=float).ravel()
        if len(self.inputs) != len(self.prices):
            raise LengthMismatch(f"{len(self.inputs)} feature rows but {len(self.prices)} prices")
        if np.any(self.prices < 0):
            raise ValidationError("normalized prices must be non-negative")

    def __len__(self):
        return len(self.prices)

    def samples(self):
        for row, price in zip(self.inputs, self.prices):
            yield SurrogateSample(HestonParams.degenerate(*row[:5]), float(row[5]), float(row[6]), float(price))

    def canonical(self) -> "SyntheticDataset":
        """Rows in lexicographic feature order, so row order never matters downstream."""
        order = np.lexsort(np.column_stack([self.inputs, self.prices]).T[::-1])
        return SyntheticDataset(self.inputs[order], self.prices[order], self.failures, self.rate)


def _design(spec: SamplingSpec) -> np.ndarray:
    lo, hi = spec.lower, spec.upper
    if spec.scheme == "grid":
        axes = [np.linspace(a, b, spec.grid_points) for a, b in zip(lo, hi)]
        return np.array(list(itertools.product(*axes)), dtype=float)
    rng = np.random.default_rng(spec.seed)
    return lo + rng.random((spec.n_samples, len(FEATURES))) * (hi - lo)


def normalized_price(row, rate=0.0, quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Call price at unit spot for one feature row."""
    params = HestonParams.degenerate(*row[:5])
    state = MarketState(1.0, rate)
    value = float(SlicePricer([math.exp(-row[6])], state, row[5], quad).prices(params)[0])
    if value < 0:
        if value < -NEGATIVE_TOLERANCE:
            raise NumericalError(f"negative price {value:.3e} for row {list(row)}")
        value = 0.0
    return value


def gen_synthetic(spec: SamplingSpec = SamplingSpec(), quad: QuadratureConfig = DEFAULT_QUAD, workers=1) -> SyntheticDataset:
    design = _design(spec)

    def price_row(row):
        try:
            value = normalized_price(row, spec.rate, quad)
        except HestonDeepCalError:
            return math.nan
        return value if math.isfinite(value) else math.nan

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            prices = np.array(list(pool.map(price_row, design)))
    else:
        prices = np.array([price_row(row) for row in design])
    ok = np.isfinite(prices)
    failures = int((~ok).sum())
    if failures > MAX_FAILURE_FRACTION * len(design):
        raise TooManyFailures(f"{failures} of {len(design)} rows failed to price")
    return SyntheticDataset(design[ok], prices[ok], failures, spec.rate)


def format_dataset_csv(data: SyntheticDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DATASET_COLUMNS)
    for row, price in zip(data.inputs, data.prices):
        writer.writerow([repr(float(v)) for v in row] + [repr(float(price))])
    return buf.getvalue()


def save_dataset(data: SyntheticDataset, path) -> None:
    atomic_write_text(path, format_dataset_csv(data))


def load_dataset(path, rate=0.0) -> SyntheticDataset:
    text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in DATASET_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise MissingColumn(f"dataset is missing columns: {', '.join(missing)}")
    rows = []
    for i, rec in enumerate(reader, start=1):
        try:
            rows.append([float(rec[c]) for c in DATASET_COLUMNS])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"row {i}: {exc}") from None
    if not rows:
        raise ValidationError("dataset has no rows")
    arr = np.array(rows)
    return SyntheticDataset(arr[:, :-1], arr[:, -1], 0, rate)


@dataclass
class SurrogateModel:
    """A trained pricing network together with its frozen scalers and domain."""

    net: Network
    in_scaler: Scaler
    out_scaler: Scaler
    lower: np.ndarray
    upper: np.ndarray
    rate: float = 0.0
    validation_rmse: float = math.nan

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)

    def __call__(self, features) -> np.ndarray:
        """Normalized prices for an (n, 7) feature matrix."""
        x = np.atleast_2d(np.asarray(features, dtype=float))
        out = predict(self.net, self.in_scaler.transform(x))
        return self.out_scaler.inverse(out).ravel()

    def price(self, params: HestonParams, maturities, moneyness) -> np.ndarray:
        return self.price_batch(params.as_array()[None, :], maturities, moneyness)[0]

    def price_batch(self, xs, maturities, moneyness) -> np.ndarray:
        """Normalized prices for P parameter vectors over the same n quotes, shape (P, n)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        t = np.asarray(maturities, dtype=float).ravel()
        m = np.asarray(moneyness, dtype=float).ravel()
        n, p = t.size, len(xs)
        first = self.net.layers[0]
        if first.activation_in == "identity":
            # the first layer is affine, so the parameter and quote halves of
            # the input are projected separately and combined by broadcasting
            mu, sd = self.in_scaler.mean, self.in_scaler.std
            w = first.weights
            eta_part = ((xs - mu[:5]) / sd[:5]) @ w[:5]
            quote_part = ((np.column_stack([t, m]) - mu[5:]) / sd[5:]) @ w[5:] + first.bias
            out = np.empty((p, n))
            # blocks of about a thousand rows keep the hidden activations in cache
            step = max(1, INFERENCE_BLOCK_ROWS // max(n, 1))
            for i in range(0, p, step):
                z = (eta_part[i:i + step, None, :] + quote_part[None, :, :]).reshape(-1, w.shape[1])
                for layer in self.net.layers[1:]:
                    if layer.activation_in == "relu":
                        np.maximum(z, 0.0, out=z)
                    else:
                        z = ACTIVATIONS[layer.activation_in][0](z)
                    z = z @ layer.weights
                    z += layer.bias
                out[i:i + step] = z[:, 0].reshape(-1, n)
            return self.out_scaler.inverse(out)
        feats = np.empty((p, n, len(FEATURES)))
        feats[:, :, :5] = xs[:, None, :]
        feats[:, :, 5] = t
        feats[:, :, 6] = m
        return self(feats.reshape(p * n, -1)).reshape(p, n)

    def out_of_range(self, maturities, moneyness) -> np.ndarray:
        t = np.asarray(maturities, dtype=float).ravel()
        m = np.asarray(moneyness, dtype=float).ravel()
        return (t < self.lower[5]) | (t > self.upper[5]) | (m < self.lower[6]) | (m > self.upper[6])

    def param_bounds(self) -> ParamBounds:
        return ParamBounds(tuple(self.lower[:5]), tuple(self.upper[:5]))

    def to_dict(self) -> dict:
        doc = network_to_dict(self.net)
        doc["meta"] = dict(
            doc["meta"],
            kind="surrogate",
            features=list(FEATURES),
            in_scaler=self.in_scaler.to_dict(),
            out_scaler=self.out_scaler.to_dict(),
            lower=self.lower.tolist(),
            upper=self.upper.tolist(),
            rate=self.rate,
            validation_rmse=self.validation_rmse,
        )
        return doc

    @classmethod
    def from_dict(cls, doc) -> "SurrogateModel":
        net = network_from_dict(doc)
        meta = net.meta
        try:
            return cls(
                net,
                Scaler.from_dict(meta["in_scaler"]),
                Scaler.from_dict(meta["out_scaler"]),
                meta["lower"],
                meta["upper"],
                float(meta.get("rate", 0.0)),
                float(meta.get("validation_rmse", math.nan)),
            )
        except KeyError as exc:
            raise ValidationError(f"network file lacks surrogate metadata {exc}") from None


def save_surrogate(model: SurrogateModel, path) -> None:
    atomic_write_text(path, json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n")


def load_surrogate(path) -> SurrogateModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    return SurrogateModel.from_dict(doc)


def train_surrogate(
    data: SyntheticDataset,
    dims: Sequence[int] = SURROGATE_DIMS,
    activations: Sequence[str] = SURROGATE_ACTIVATIONS,
    cfg: TrainConfig = SURROGATE_TRAIN,
    validation_fraction=0.2,
    seed=0,
):
    """Fit the surrogate on 80% of ``data``; returns (model, per-epoch training loss).

    The remaining rows give ``model.validation_rmse`` in normalized-price units.
    """
    if dims[0] != len(FEATURES) or dims[-1] != 1:
        raise ValidationError(f"surrogate must map {len(FEATURES)} inputs to 1 output, got dims {tuple(dims)}")
    if not 0 < validation_fraction < 1:
        raise ValidationError("validation_fraction must lie in (0, 1)")
    data = data.canonical()
    n = len(data)
    n_val = max(1, int(round(validation_fraction * n)))
    if n - n_val < 1:
        raise ValidationError("dataset too small to split")
    perm = np.random.default_rng(seed).permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = data.inputs[train_idx], data.prices[train_idx]

    in_scaler = Scaler.fit(x_tr)
    out_scaler = Scaler.fit(y_tr)
    net = build_network(dims, activations, seed)
    if np.ptp(y_tr) == 0:
        # constant target: the output bias alone fits it, and zero gradients keep it there
        net.layers[-1].weights[:] = 0.0
    net, history = train(net, Dataset(in_scaler.transform(x_tr), out_scaler.transform(y_tr)), cfg)
    lower = data.inputs.min(axis=0)
    upper = data.inputs.max(axis=0)
    model = SurrogateModel(net, in_scaler, out_scaler, lower, upper, data.rate)
    pred = model(data.inputs[val_idx])
    model.validation_rmse = math.sqrt(mse_loss(pred, data.prices[val_idx]))
    return model, history


def surrogate_objective(chain: OptionChain, model: SurrogateModel, weights: CalibrationWeights = CalibrationWeights()):
    """Weighted-RMSE objective priced through the surrogate, with a ``batch`` method."""
    w = weights.resolve(chain)
    market = chain.prices
    spot = chain.state.spot
    t, m = chain.maturities, chain.moneyness

    def batch(xs):
        model_prices = spot * model.price_batch(xs, t, m)
        return np.sqrt(np.sum(w * (model_prices - market) ** 2, axis=1))

    def objective(x):
        return float(batch(np.asarray(x, dtype=float)[None, :])[0])

    objective.batch = batch
    objective.weights = w
    return objective


def surrogate_calibrate(
    chain: OptionChain,
    model: SurrogateModel,
    bounds: Optional[ParamBounds] = None,
    weights: CalibrationWeights = CalibrationWeights(),
    de_cfg: DeConfig = DeConfig(),
) -> CalibrationResult:
    """Differential evolution over the frozen surrogate.

    Quotes outside the training domain are still priced; each one raises an
    :class:`ExtrapolationWarning`.
    """
    bounds = bounds or model.param_bounds()
    bounds.check_heston()
    outside = model.out_of_range(chain.maturities, chain.moneyness)
    for q, flag in zip(chain.quotes, outside):
        if flag:
            warnings.warn(
                f"quote K={q.strike} T={q.maturity_days}d lies outside the surrogate training range",
                ExtrapolationWarning,
                stacklevel=2,
            )
    if chain.state.rate != model.rate:
        warnings.warn(
            f"chain rate {chain.state.rate} differs from the surrogate's rate {model.rate}",
            ExtrapolationWarning,
            stacklevel=2,
        )
    t0 = time.perf_counter()
    result = differential_evolution(surrogate_objective(chain, model, weights), bounds, de_cfg)
    result.method = f"surrogate_{result.method}"
    result.wall_time = time.perf_counter() - t0
    return result
