"""Multi-output feed-forward network trained with mini-batch Adam.

Plain numpy, float64 throughout. The loss is the mean squared error over all
samples and outputs; the output layer is linear.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import Divergence, ShapeMismatch

log = logging.getLogger(__name__)

_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "sigmoid": (lambda z: 1.0 / (1.0 + np.exp(-z)), lambda z, a: a * (1.0 - a)),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}


def split_neurons(total: int, layers: int) -> tuple:
    """Spread ``total`` hidden neurons over ``layers`` near-equal layers, larger first."""
    if layers < 1 or total < layers:
        raise ValueError(f"cannot spread {total} neurons over {layers} layers")
    base, extra = divmod(total, layers)
    return tuple(base + 1 if i < extra else base for i in range(layers))


@dataclass
class MlpParams:
    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias vector per weight matrix")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeMismatch(f"layer {i} input width does not match layer {i - 1}")

    @property
    def widths(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                         self.activation)

    def arrays(self) -> list:
        return self.weights + self.biases


def init_mlp(widths, seed=0, activation="relu") -> MlpParams:
    """He-normal weights and zero biases for layer widths (input, hidden..., output)."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation)


def _forward_cache(params, X):
    act = _ACTIVATIONS[params.activation][0]
    zs, acts = [], [X]
    a = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        a = z if i == last else act(z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def _check_input(params, X):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != params.widths[0]:
        raise ShapeMismatch(f"input width {X.shape[-1]} != network input {params.widths[0]}")
    return X


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Network output for one vector or a batch of rows."""
    x = _check_input(params, x)
    single = x.ndim == 1
    _, acts = _forward_cache(params, np.atleast_2d(x))
    return acts[-1][0] if single else acts[-1]


def mlp_loss(params: MlpParams, X, Y) -> float:
    pred = mlp_forward(params, np.atleast_2d(X))
    return float(np.mean((pred - np.atleast_2d(Y)) ** 2))


def mlp_gradient(params: MlpParams, X, Y):
    """Backpropagated gradient of the mean squared error.

    Returns ``(weight_grads, bias_grads, loss)``.
    """
    X = np.atleast_2d(_check_input(params, X))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if len(X) == 0:
        raise ShapeMismatch("empty batch")
    if Y.shape != (len(X), params.widths[-1]):
        raise ShapeMismatch(f"targets {Y.shape} do not match output width {params.widths[-1]}")
    dact = _ACTIVATIONS[params.activation][1]
    zs, acts = _forward_cache(params, X)
    resid = acts[-1] - Y
    loss = float(np.mean(resid ** 2))
    delta = 2.0 * resid / resid.size
    gW = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * dact(zs[i - 1], acts[i])
    return gW, gb, loss


@dataclass
class MlpTrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 2000
    batch_size: int = 256
    seed: int = 0
    checkpoint: bool = True
    optimizer: str = "adam"  # or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    params: MlpParams
    train_curve: list = field(default_factory=list)
    val_curve: list = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.val_curve[self.best_epoch - 1]


def mlp_train(train, validation, config: MlpTrainConfig, params: MlpParams) -> TrainResult:
    """Mini-batch training from ``params``; ``train``/``validation`` are ``(X, Y)`` pairs.

    With checkpointing on, the parameters of the epoch with the lowest
    validation loss are returned.
    """
    X, Y = (np.asarray(a, dtype=float) for a in train)
    Xv, Yv = (np.asarray(a, dtype=float) for a in validation)
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("training and validation sets must be non-empty")
    params = params.copy()
    rng = np.random.default_rng(config.seed)
    arrays = params.arrays()
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    b1, b2 = config.beta1, config.beta2
    step = 0
    best, best_loss, best_epoch = params.copy(), np.inf, 0
    train_curve, val_curve = [], []
    n = len(X)
    nw = len(params.weights)

    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            gW, gb, loss = mlp_gradient(params, X[idx], Y[idx])
            total += loss * len(idx)
            grads = gW + gb
            step += 1
            if config.optimizer == "adam":
                lr_t = config.learning_rate * np.sqrt(1 - b2 ** step) / (1 - b1 ** step)
                for a, g, mi, vi in zip(arrays, grads, m, v):
                    mi *= b1
                    mi += (1 - b1) * g
                    vi *= b2
                    vi += (1 - b2) * g * g
                    a -= lr_t * mi / (np.sqrt(vi) + config.eps)
            else:
                for a, g in zip(arrays, grads):
                    a -= config.learning_rate * g
        train_loss = total / n
        val_loss = mlp_loss(params, Xv, Yv)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise Divergence(epoch)
        train_curve.append(train_loss)
        val_curve.append(val_loss)
        if val_loss < best_loss:
            best_loss, best_epoch = val_loss, epoch
            best = MlpParams([a.copy() for a in arrays[:nw]], [a.copy() for a in arrays[nw:]],
                             params.activation)
    if not config.checkpoint:
        best, best_epoch = params, len(val_curve)
    log.debug("mlp_train: best epoch %d val %.6g", best_epoch, val_curve[best_epoch - 1])
    return TrainResult(best, train_curve, val_curve, best_epoch)


class FFNNRegressor:
    """Feed-forward regressor with per-output target standardization."""

    kind = "ffnn"

    def __init__(self, hidden=(23, 23, 22, 22), activation="relu", learning_rate=1e-4,
                 epochs=2000, batch_size=256, seed=0, optimizer="adam", checkpoint=True):
        self.hidden = tuple(hidden)
        self.activation = activation
        self.config = MlpTrainConfig(learning_rate, epochs, batch_size, seed, checkpoint,
                                     optimizer)
        self.params = None
        self.y_mean = None
        self.y_scale = None
        self.result = None

    @classmethod
    def from_neurons(cls, total=90, layers=4, **kw):
        return cls(hidden=split_neurons(total, layers), **kw)

    def fit(self, X, Y, X_val, Y_val):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self.y_mean = Y.mean(axis=0)
        scale = Y.std(axis=0)
        self.y_scale = np.where(scale > 0, scale, 1.0)
        widths = (X.shape[1],) + self.hidden + (Y.shape[1],)
        init = init_mlp(widths, self.config.seed, self.activation)
        self.result = mlp_train((X, self._to_unit(Y)),
                                (np.asarray(X_val, float), self._to_unit(Y_val)),
                                self.config, init)
        self.params = self.result.params
        return self

    def _to_unit(self, Y):
        return (np.asarray(Y, dtype=float) - self.y_mean) / self.y_scale

    def predict(self, X) -> np.ndarray:
        """Predictions in target units; a single vector gives a single row."""
        return mlp_forward(self.params, X) * self.y_scale + self.y_mean

    def get_state(self):
        config = {"hidden": list(self.hidden), "activation": self.activation,
                  "learning_rate": self.config.learning_rate, "epochs": self.config.epochs,
                  "batch_size": self.config.batch_size, "seed": self.config.seed,
                  "optimizer": self.config.optimizer, "checkpoint": self.config.checkpoint}
        arrays = {"y_mean": self.y_mean, "y_scale": self.y_scale}
        for i, (W, b) in enumerate(zip(self.params.weights, self.params.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        return config, arrays

    @classmethod
    def from_state(cls, config, arrays):
        model = cls(**config)
        n = sum(1 for k in arrays if k.startswith("W"))
        model.params = MlpParams([arrays[f"W{i}"] for i in range(n)],
                                 [arrays[f"b{i}"] for i in range(n)], model.activation)
        model.y_mean = arrays["y_mean"]
        model.y_scale = arrays["y_scale"]
        return model
