"""A small dense feedforward network engine in plain numpy.

Layer ``l`` applies its activation to its *input* and then an affine map::

    z0 = x,   z_l = act_l(z_{l-1}) @ W_l + b_l,   y = z_L

so the output layer is affine and the first layer normally carries the
identity activation. Weights are stored n_in x n_out (row vector times
matrix).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyInput,
    LengthMismatch,
    ShapeMismatch,
    StaleCache,
    ValidationError,
    ZeroFanIn,
)

FORMAT_TAG = "heston-deepcal-network"
FORMAT_VERSION = 1


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_grad(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


ACTIVATIONS = {
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    # derivative at exactly 0 is taken as 0
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(z.dtype)),
    "sigmoid": (_sigmoid, _sigmoid_grad),
}


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation_in: str = "identity"

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.bias = np.atleast_1d(np.asarray(self.bias, dtype=float))
        if self.activation_in not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation_in!r}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeMismatch(f"bias shape {self.bias.shape} does not match weights {self.weights.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("layer parameters must be finite")

    @property
    def n_in(self):
        return self.weights.shape[0]

    @property
    def n_out(self):
        return self.weights.shape[1]


@dataclass
class Scaler:
    """Per-feature z-score transform."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if self.mean.shape != self.std.shape:
            raise ShapeMismatch("scaler mean and std shapes differ")
        if np.any(~(self.std > 0)):
            raise ValidationError("scaler std must be positive")

    @classmethod
    def identity(cls, n=1):
        return cls(np.zeros(n), np.ones(n))

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=float)
        x2 = x.reshape(len(x), -1)
        std = x2.std(axis=0)
        # constant features keep unit scale
        std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(x2.mean(axis=0))), std, 1.0)
        return cls(x2.mean(axis=0), std)

    def transform(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1 and self.mean.size == 1:
            return (x - self.mean[0]) / self.std[0]
        return (x - self.mean) / self.std

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1 and self.mean.size == 1:
            return x * self.std[0] + self.mean[0]
        return x * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["std"])


@dataclass
class Network:
    layers: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("a network needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.n_out != cur.n_in:
                raise ShapeMismatch(f"layer widths do not chain: {prev.n_out} -> {cur.n_in}")

    @property
    def input_dim(self):
        return self.layers[0].n_in

    @property
    def output_dim(self):
        return self.layers[-1].n_out

    @property
    def dims(self):
        return [self.input_dim] + [layer.n_out for layer in self.layers]

    @property
    def activations(self):
        return [layer.activation_in for layer in self.layers]

    def parameters(self) -> list:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> "Network":
        if len(params) != 2 * len(self.layers):
            raise ShapeMismatch("parameter list does not match the layer count")
        layers = []
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ShapeMismatch(f"parameter shapes for layer {i} changed")
            layers.append(DenseLayer(w, b, layer.activation_in))
        return Network(layers, dict(self.meta))

    def copy(self) -> "Network":
        return self.with_parameters([p.copy() for p in self.parameters()])


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        self.targets = np.asarray(self.targets, dtype=float)
        if len(self.inputs) == 0:
            raise EmptyInput("dataset has no rows")
        if len(self.inputs) != len(self.targets):
            raise LengthMismatch(f"{len(self.inputs)} input rows but {len(self.targets)} targets")

    def __len__(self):
        return len(self.inputs)


@dataclass
class AdamState:
    m1: list
    m2: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    shuffle: bool = True
    keep_best: bool = False

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")


def kaiming_init(n_in, n_out, seed=None) -> np.ndarray:
    """Weights drawn i.i.d. from N(0, 2 / n_in)."""
    if n_in < 1:
        raise ZeroFanIn(f"fan-in must be >= 1, got {n_in}")
    return _rng(seed).normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, n_out))


def build_network(dims: Sequence[int], activations: Sequence[str], seed=None) -> Network:
    """Kaiming-initialized network; ``activations[l]`` is applied to layer l's input."""
    if len(activations) != len(dims) - 1:
        raise ShapeMismatch("need one input activation per layer")
    rng = _rng(seed)
    layers = [
        DenseLayer(kaiming_init(n_in, n_out, rng), np.zeros(n_out), act)
        for n_in, n_out, act in zip(dims[:-1], dims[1:], activations)
    ]
    return Network(layers)


def forward(net: Network, batch):
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if net.input_dim == 1 else x[None, :]
    if x.shape[1] != net.input_dim:
        raise ShapeMismatch(f"input has {x.shape[1]} features, network expects {net.input_dim}")
    cache = [x]
    z = x
    for layer in net.layers:
        z = ACTIVATIONS[layer.activation_in][0](z) @ layer.weights + layer.bias
        cache.append(z)
    out = z[:, 0] if net.output_dim == 1 else z
    return out, cache


def predict(net: Network, batch) -> np.ndarray:
    return forward(net, batch)[0]


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise LengthMismatch(f"prediction shape {pred.shape} vs target shape {target.shape}")
    if pred.size == 0:
        raise EmptyInput("mse of empty vectors")
    diff = target - pred
    return float(np.sum(diff * diff) / len(diff))


def backward(net: Network, cache, target) -> list:
    """Gradients of :func:`mse_loss` as a list of (dW, db) per layer."""
    if len(cache) != len(net.layers) + 1:
        raise StaleCache("cache depth does not match the network")
    for layer, z_in, z_out in zip(net.layers, cache[:-1], cache[1:]):
        if z_in.shape[1] != layer.n_in or z_out.shape[1] != layer.n_out:
            raise StaleCache("cache shapes do not match the network")
    out = cache[-1]
    y = np.asarray(target, dtype=float).reshape(out.shape[0], -1)
    if y.shape != out.shape:
        raise LengthMismatch(f"target shape {y.shape} vs output shape {out.shape}")
    delta = 2.0 * (out - y) / out.shape[0]
    grads = [None] * len(net.layers)
    for l in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[l]
        act, act_grad = ACTIVATIONS[layer.activation_in]
        z_in = cache[l]
        grads[l] = (act(z_in).T @ delta, delta.sum(axis=0))
        if l > 0:
            delta = (delta @ layer.weights.T) * act_grad(z_in)
    return grads


def flat_grads(grads) -> list:
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


def sgd_step(params, grads, lr) -> list:
    return [p - lr * g for p, g in zip(params, grads)]


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    m1 = [b1 * m + (1.0 - b1) * g for m, g in zip(state.m1, grads)]
    m2 = [b2 * v + (1.0 - b2) * (g * g) for v, g in zip(state.m2, grads)]
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new = [p - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon) for p, m, v in zip(params, m1, m2)]
    return new, AdamState(m1, m2, t)


def train(net: Network, data: Dataset, cfg: TrainConfig):
    """Mini-batch training on MSE; returns (trained network, per-epoch full-data loss).

    With ``cfg.keep_best`` the returned weights are those of the epoch with
    the lowest full-data training loss rather than the last epoch.
    """
    rng = np.random.default_rng(cfg.seed)
    x, y = data.inputs, data.targets
    m = len(data)
    params = [p.copy() for p in net.parameters()]
    state = AdamState.zeros_like(params)
    current = net.with_parameters(params)
    history = []
    best_loss, best_params = math.inf, None
    for _ in range(cfg.epochs):
        order = rng.permutation(m) if cfg.shuffle else np.arange(m)
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, cache = forward(current, x[idx])
            grads = flat_grads(backward(current, cache, y[idx]))
            if cfg.optimizer == "adam":
                params, state = adam_step(params, grads, state, cfg)
            else:
                params = sgd_step(params, grads, cfg.lr)
            current = _rebind(current, params)
        pred = predict(current, x)
        loss = mse_loss(pred, y.reshape(pred.shape))
        history.append(loss)
        if cfg.keep_best and loss < best_loss:
            best_loss, best_params = loss, params
    if cfg.keep_best and best_params is not None:
        current = _rebind(current, best_params)
    return current, history


def _rebind(net: Network, params) -> Network:
    # hot path in training: skips the validation done by with_parameters
    for i, layer in enumerate(net.layers):
        layer.weights = params[2 * i]
        layer.bias = params[2 * i + 1]
    return net


def network_to_dict(net: Network) -> dict:
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "dims": net.dims,
        "activations": net.activations,
        "layers": [{"weights": l.weights.tolist(), "bias": l.bias.tolist()} for l in net.layers],
        "meta": net.meta,
    }


def network_from_dict(doc: dict) -> Network:
    if doc.get("format") != FORMAT_TAG:
        raise ValidationError(f"not a network document (format={doc.get('format')!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported network document version {doc.get('version')!r}")
    layers = [
        DenseLayer(np.array(l["weights"], dtype=float), np.array(l["bias"], dtype=float), act)
        for l, act in zip(doc["layers"], doc["activations"])
    ]
    net = Network(layers, doc.get("meta", {}))
    if net.dims != list(doc["dims"]):
        raise ShapeMismatch(f"declared dims {doc['dims']} disagree with layer shapes {net.dims}")
    return net


def dumps_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=1) + "\n"


def save_network(net: Network, path) -> None:
    from .market_data import atomic_write_text

    atomic_write_text(path, dumps_network(net))


def load_network(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))
