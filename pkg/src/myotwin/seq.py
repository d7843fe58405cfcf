"""Recurrent one-step force forecaster.

A single gated-memory (LSTM) layer of 64 hidden units unrolled over 10-step
scaled-force windows, followed by a 32-unit ReLU dense layer and a scalar
linear output, trained sequence-to-one. Gate blocks are stacked in the order
input, forget, candidate, output along the last weight axis. Forecasting
supports teacher-forced one-step prediction and autoregressive (open-loop)
rollout where predictions are fed back as inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .datakit import MinMaxScaler, SplitAssignment
from .errors import ToolkitError
from .mtwin import ForceTrace
from .neural import AdamState, TrainConfig, adam_init, adam_step
from .validation import as_1d_array, as_2d_array, check_fitted

DEFAULT_WINDOW = 10
TEACHER_FORCED = "TeacherForced"
AUTOREGRESSIVE = "Autoregressive"


@dataclass(frozen=True)
class LstmParams:
    """Gate weights (input-to-hidden, hidden-to-hidden), gate biases, and the
    dense + output head. Univariate input (width 1)."""

    Wx: np.ndarray = field(repr=False)  # (1, 4H)
    Wh: np.ndarray = field(repr=False)  # (H, 4H)
    b: np.ndarray = field(repr=False)  # (4H,)
    W_dense: np.ndarray = field(repr=False)  # (H, D)
    b_dense: np.ndarray = field(repr=False)  # (D,)
    W_out: np.ndarray = field(repr=False)  # (D, 1)
    b_out: np.ndarray = field(repr=False)  # (1,)
    hidden_width: int = 64
    dense_width: int = 32

    def parameters(self) -> list[np.ndarray]:
        return [self.Wx, self.Wh, self.b, self.W_dense, self.b_dense, self.W_out, self.b_out]

    def with_parameters(self, params: list[np.ndarray]) -> "LstmParams":
        Wx, Wh, b, W_dense, b_dense, W_out, b_out = params
        return replace(self, Wx=Wx, Wh=Wh, b=b, W_dense=W_dense, b_dense=b_dense,
                       W_out=W_out, b_out=b_out)


@dataclass(frozen=True)
class CellState:
    """Hidden and cell vectors, (batch, hidden_width); zeros per sequence."""

    h: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)


def init_lstm(seed: int = 0, hidden_width: int = 64, dense_width: int = 32) -> LstmParams:
    """Gate weights uniform in +/- 1/sqrt(H); forget-gate bias 1.0; He-style
    init for the dense head."""
    rng = np.random.default_rng(seed)
    H, D = hidden_width, dense_width
    k = 1.0 / np.sqrt(H)
    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0
    return LstmParams(
        Wx=rng.uniform(-k, k, size=(1, 4 * H)),
        Wh=rng.uniform(-k, k, size=(H, 4 * H)),
        b=b,
        W_dense=rng.normal(0.0, np.sqrt(2.0 / H), size=(H, D)),
        b_dense=np.zeros(D),
        W_out=rng.normal(0.0, np.sqrt(2.0 / D), size=(D, 1)),
        b_out=np.zeros(1),
        hidden_width=H,
        dense_width=D,
    )


def zero_state(params: LstmParams, batch_size: int = 1) -> CellState:
    return CellState(
        h=np.zeros((batch_size, params.hidden_width)),
        c=np.zeros((batch_size, params.hidden_width)),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _as_column(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def _gates(params: LstmParams, x_col: np.ndarray, state: CellState):
    H = params.hidden_width
    z = x_col @ params.Wx + state.h @ params.Wh + params.b
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = _sigmoid(z[:, 3 * H :])
    return i, f, g, o


def cell_step(params: LstmParams, value, state: CellState) -> tuple[np.ndarray, CellState]:
    """One gated update: c' = f*c + i*g, h' = o*tanh(c')."""
    x_col = _as_column(value)
    if state.h.shape[1] != params.hidden_width:
        raise ToolkitError(
            "width-mismatch",
            f"state width {state.h.shape[1]} != hidden width {params.hidden_width}",
        )
    i, f, g, o = _gates(params, x_col, state)
    c_new = f * state.c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, CellState(h=h_new, c=c_new)


def _head(params: LstmParams, h: np.ndarray) -> np.ndarray:
    dense = np.maximum(h @ params.W_dense + params.b_dense, 0.0)
    return (dense @ params.W_out + params.b_out).ravel()


def forward_window(params: LstmParams, windows, window_width: int = DEFAULT_WINDOW):
    """Unroll the cell over one window (or a batch of windows) from zero
    state and map the final hidden vector through the dense head."""
    single = np.asarray(windows).ndim == 1
    W = as_2d_array(windows, "windows")
    if W.shape[1] != window_width:
        raise ToolkitError(
            "wrong-window-length", f"window length {W.shape[1]} != expected {window_width}"
        )
    state = zero_state(params, W.shape[0])
    for t in range(W.shape[1]):
        _, state = cell_step(params, W[:, t], state)
    out = _head(params, state.h)
    return float(out[0]) if single else out


def backward_window(params: LstmParams, windows, targets,
                    window_width: int = DEFAULT_WINDOW) -> tuple[list[np.ndarray], float]:
    """Exact MSE gradients through the unroll and the head (BPTT).

    Gradient order matches ``params.parameters()``.
    """
    X = as_2d_array(windows, "windows")
    y = as_1d_array(targets, "targets")
    if X.shape[0] != len(y):
        raise ToolkitError("length-mismatch", f"{X.shape[0]} windows vs {len(y)} targets")
    if len(y) == 0:
        raise ToolkitError("empty-input", "backward needs a nonempty batch")
    if X.shape[1] != window_width:
        raise ToolkitError("wrong-window-length", f"window length {X.shape[1]} != {window_width}")

    B, T = X.shape
    H = params.hidden_width
    state = zero_state(params, B)
    cache = []
    for t in range(T):
        x_col = X[:, t].reshape(-1, 1)
        i, f, g, o = _gates(params, x_col, state)
        c_new = f * state.c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((x_col, state.h, state.c, i, f, g, o, c_new, tc))
        state = CellState(h=h_new, c=c_new)

    dense_pre = state.h @ params.W_dense + params.b_dense
    dense = np.maximum(dense_pre, 0.0)
    pred = (dense @ params.W_out + params.b_out).ravel()
    err = pred - y
    loss = float(np.mean(err**2))

    dpred = (2.0 * err / B).reshape(-1, 1)
    dW_out = dense.T @ dpred
    db_out = dpred.sum(axis=0)
    ddense = (dpred @ params.W_out.T) * (dense_pre > 0.0)
    dW_dense = state.h.T @ ddense
    db_dense = ddense.sum(axis=0)

    dWx = np.zeros_like(params.Wx)
    dWh = np.zeros_like(params.Wh)
    db = np.zeros_like(params.b)
    dh = ddense @ params.W_dense.T
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        x_col, h_prev, c_prev, i, f, g, o, c_new, tc = cache[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc**2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g**2), do * o * (1.0 - o)],
            axis=1,
        )
        dWx += x_col.T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dh = dz @ params.Wh.T
        dc = dc * f
    return [dWx, dWh, db, dW_dense, db_dense, dW_out, db_out], loss


def train_dynamic(windows, targets, split: SplitAssignment | None = None,
                  config: TrainConfig = TrainConfig(epochs=30), seed: int = 0,
                  hidden_width: int = 64, dense_width: int = 32,
                  checkpoint_best: bool = False) -> tuple[LstmParams, list[dict]]:
    """Adam-driven mini-batch training on the training partition.

    Per-epoch validation loss is recorded when the split has a validation
    partition. Returns the final-epoch parameters unless ``checkpoint_best``
    asks for the best-validation snapshot. The last partial batch is trained,
    not dropped.
    """
    X = as_2d_array(windows, "windows")
    y = as_1d_array(targets, "targets")
    if split is None:
        train_idx = np.arange(len(y))
        val_idx = np.array([], dtype=int)
    else:
        train_idx = split.indices("train")
        val_idx = split.indices("validation") if "validation" in split.partitions else np.array([], dtype=int)
    if len(train_idx) == 0:
        raise ToolkitError("empty-partition", "training partition is empty")

    model = init_lstm(seed, hidden_width, dense_width)
    params = model.parameters()
    state = adam_init(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    width = X.shape[1]
    history = []
    best = None
    for epoch in range(config.epochs):
        order = train_idx[np.random.default_rng([seed, epoch]).permutation(len(train_idx))]
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            model = model.with_parameters(params)
            grads, loss = backward_window(model, X[batch], y[batch], width)
            params, state = adam_step(state, params, grads)
            epoch_loss += loss * len(batch)
        record = {"epoch": epoch, "train_loss": epoch_loss / len(order), "val_loss": None}
        if len(val_idx) > 0:
            model = model.with_parameters(params)
            val_pred = forward_window(model, X[val_idx], width)
            record["val_loss"] = float(np.mean((val_pred - y[val_idx]) ** 2))
            if best is None or record["val_loss"] < best[0]:
                best = (record["val_loss"], [p.copy() for p in params])
        history.append(record)
    if checkpoint_best and best is not None:
        params = best[1]
    return model.with_parameters(params), history


@dataclass(frozen=True)
class ForecastResult:
    """One-step forecasts aligned to the source trace: prediction k targets
    trace sample k + offset."""

    mode: str
    predicted_scaled: np.ndarray = field(repr=False)
    predicted_force_N: np.ndarray = field(repr=False)
    offset: int = DEFAULT_WINDOW


def forecast(model, trace: ForceTrace, scaler: MinMaxScaler, mode: str,
             window_width: int = DEFAULT_WINDOW) -> ForecastResult:
    """Run the forecaster over a trace.

    TeacherForced feeds each prediction the true past window; Autoregressive
    seeds with the first true window and then feeds predictions back.
    ``model`` is either LstmParams or any callable mapping a window to the
    next scaled value (used for stub predictors in tests).
    """
    if mode not in (TEACHER_FORCED, AUTOREGRESSIVE):
        raise ToolkitError("invalid-mode", f"mode must be {TEACHER_FORCED} or {AUTOREGRESSIVE}")
    values = np.asarray(trace.forces_N, dtype=float)
    if len(values) < window_width + 1:
        raise ToolkitError("trace-too-short", f"need > {window_width} samples, got {len(values)}")
    scaled = scaler.transform(values)
    n_pred = len(values) - window_width

    if isinstance(model, LstmParams):
        predict_batch = lambda W: forward_window(model, W, window_width)
    else:
        predict_batch = lambda W: np.array([float(model(w)) for w in W])

    if mode == TEACHER_FORCED:
        windows = np.lib.stride_tricks.sliding_window_view(scaled, window_width)[:n_pred]
        preds = np.asarray(predict_batch(np.array(windows)), dtype=float)
    else:
        buffer = list(scaled[:window_width])
        preds = np.empty(n_pred)
        for k in range(n_pred):
            window = np.array(buffer[-window_width:])
            preds[k] = predict_batch(window.reshape(1, -1))[0]
            buffer.append(preds[k])

    return ForecastResult(
        mode=mode,
        predicted_scaled=preds,
        predicted_force_N=scaler.inverse_transform(preds),
        offset=window_width,
    )


class LstmForecaster(RegressorMixin, BaseEstimator):
    """Estimator wrapper: fit on (windows, next values), predict one-step."""

    def __init__(self, hidden_width=64, dense_width=32, window_width=DEFAULT_WINDOW,
                 epochs=30, batch_size=32, learning_rate=1e-3, seed=0, checkpoint_best=False):
        self.hidden_width = hidden_width
        self.dense_width = dense_width
        self.window_width = window_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.checkpoint_best = checkpoint_best
        self.params_ = None
        self.history_ = None

    def fit(self, X, y, split: SplitAssignment | None = None):
        config = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                             learning_rate=self.learning_rate)
        self.params_, self.history_ = train_dynamic(
            X, y, split, config, self.seed, self.hidden_width, self.dense_width,
            self.checkpoint_best,
        )
        return self

    def predict(self, X):
        check_fitted(self, "params_")
        return forward_window(self.params_, as_2d_array(X), self.window_width)
