"""Feedforward network for static max-force regression.

Architecture: four ReLU hidden layers of 68/50/30/10 units and a single
linear output. Training is plain mini-batch MSE with the adaptive-moment
optimizer; targets stay in raw newtons. Gradients are exact backpropagation
(the ReLU subgradient at 0 is taken as 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import ToolkitError
from .validation import as_1d_array, as_2d_array, check_fitted

HIDDEN_SIZES = (68, 50, 30, 10)


@dataclass(frozen=True)
class MlpModel:
    """Affine + ReLU chain; weights[l] has shape (fan_in, fan_out)."""

    weights: tuple = field(repr=False)
    biases: tuple = field(repr=False)
    layer_sizes: tuple[int, ...] = ()

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def with_parameters(self, params: list[np.ndarray]) -> "MlpModel":
        weights = tuple(params[0::2])
        biases = tuple(params[1::2])
        return replace(self, weights=weights, biases=biases)


def init_mlp(input_width: int, seed: int = 0, hidden_sizes=HIDDEN_SIZES) -> MlpModel:
    """He-style init: weights ~ Normal(0, 2 / fan_in), biases zero."""
    if input_width < 1:
        raise ToolkitError("invalid-params", "input_width must be >= 1")
    sizes = (input_width, *hidden_sizes, 1)
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=tuple(weights), biases=tuple(biases), layer_sizes=sizes)


def n_parameters(model: MlpModel) -> int:
    return sum(W.size + b.size for W, b in zip(model.weights, model.biases))


def _check_width(model: MlpModel, X: np.ndarray) -> None:
    if X.shape[1] != model.layer_sizes[0]:
        raise ToolkitError(
            "width-mismatch", f"model expects input width {model.layer_sizes[0]}, got {X.shape[1]}"
        )


def forward(model: MlpModel, inputs) -> np.ndarray | float:
    """Predict. A single 1-d input returns a scalar, a matrix returns a vector."""
    single = np.asarray(inputs).ndim == 1
    X = as_2d_array(inputs)
    _check_width(model, X)
    h = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
    out = (h @ model.weights[-1] + model.biases[-1]).ravel()
    return float(out[0]) if single else out


def backward(model: MlpModel, inputs, targets) -> tuple[list[np.ndarray], float]:
    """Exact gradients of batch-mean squared error; returns (grads, loss).

    Gradients are ordered like ``model.parameters()`` (W0, b0, W1, b1, ...).
    """
    X = as_2d_array(inputs)
    y = as_1d_array(targets, "targets")
    if X.shape[0] != len(y):
        raise ToolkitError("length-mismatch", f"{X.shape[0]} inputs vs {len(y)} targets")
    if len(y) == 0:
        raise ToolkitError("empty-input", "backward needs a nonempty batch")
    _check_width(model, X)

    n_layers = len(model.weights)
    activations = [X]
    pre = []
    h = X
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre.append(z)
        h = z if l == n_layers - 1 else np.maximum(z, 0.0)
        activations.append(h)

    pred = activations[-1].ravel()
    err = pred - y
    loss = float(np.mean(err**2))

    grads: list[np.ndarray] = [None] * (2 * n_layers)
    delta = (2.0 * err / len(y)).reshape(-1, 1)
    for l in range(n_layers - 1, -1, -1):
        grads[2 * l] = activations[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (pre[l - 1] > 0.0)
    return grads, loss


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    m: list = field(repr=False)
    v: list = field(repr=False)
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: list[np.ndarray], learning_rate: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        step=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """One bias-corrected adaptive-moment update; returns (new params, state)."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ToolkitError("shape-mismatch", "parameter and gradient shapes disagree")
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g**2
        m_hat = state.m[i] / (1.0 - state.beta1**t)
        v_hat = state.v[i] / (1.0 - state.beta2**t)
        out.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return out, state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ToolkitError("invalid-params", "epochs must be >= 1")
        if self.batch_size < 1:
            raise ToolkitError("invalid-params", "batch_size must be >= 1")


def train_static(inputs, targets, config: TrainConfig = TrainConfig(), seed: int = 0,
                 hidden_sizes=HIDDEN_SIZES) -> tuple[MlpModel, list[float]]:
    """Mini-batch training on encoded static rows.

    The per-epoch history entry is the batch-size-weighted mean of the batch
    losses seen during that epoch. Epoch shuffling is reseeded from
    (seed, epoch), so training is deterministic end to end.
    """
    X = as_2d_array(inputs)
    y = as_1d_array(targets, "targets")
    if len(y) == 0:
        raise ToolkitError("empty-training-set", "no training rows")
    model = init_mlp(X.shape[1], seed, hidden_sizes)
    params = model.parameters()
    state = adam_init(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    history = []
    n = len(y)
    for epoch in range(config.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            model = model.with_parameters(params)
            grads, loss = backward(model, X[batch], y[batch])
            params, state = adam_step(state, params, grads)
            epoch_loss += loss * len(batch)
        history.append(epoch_loss / n)
    return model.with_parameters(params), history


class MlpRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around init_mlp/train_static/forward."""

    def __init__(self, hidden_sizes=HIDDEN_SIZES, epochs=50, batch_size=32,
                 learning_rate=1e-3, seed=0):
        self.hidden_sizes = hidden_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.model_ = None
        self.history_ = None

    def fit(self, X, y):
        config = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                             learning_rate=self.learning_rate)
        self.model_, self.history_ = train_static(X, y, config, self.seed, self.hidden_sizes)
        return self

    def predict(self, X):
        check_fitted(self, "model_")
        return forward(self.model_, as_2d_array(X))
