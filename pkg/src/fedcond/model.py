"""Small differentiable models, losses and evaluation metrics.

Parameters of every model live in one flat float64 vector so that they can be
shipped around, averaged and counted in bytes without caring about shapes.
Layouts (row-major):

* linear / logistic: ``W (input_dim x output_dim)``, ``b (output_dim)``
* mlp-1-hidden: ``W1 (input_dim x hidden)``, ``b1``, ``W2 (hidden x output)``, ``b2``

A classification model with ``output_dim == 1`` is a binary sigmoid model; with
``output_dim >= 2`` it is a softmax over ``output_dim`` classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidInputError

ParamVector = np.ndarray

KINDS = ("linear-regression", "logistic-classification", "mlp-1-hidden")
LOSSES = ("cross-entropy", "mean-absolute-error")
METRICS = ("error-rate", "smape", "one-minus-f1")

# Upper end of each metric's range; every metric is oriented larger-is-worse.
METRIC_UPPER = {"error-rate": 1.0, "smape": 2.0, "one-minus-f1": 1.0}

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    output_dim: int = 1
    hidden_dim: int = 0
    task: str = "classification"  # only consulted for mlp-1-hidden

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("input_dim and output_dim must be positive")
        if self.kind == "mlp-1-hidden":
            if self.hidden_dim < 1:
                raise ConfigError("mlp-1-hidden needs hidden_dim >= 1")
            if self.task not in ("classification", "regression"):
                raise ConfigError(f"unknown task {self.task!r}")
        elif self.hidden_dim != 0:
            raise ConfigError("hidden_dim must be 0 unless kind is mlp-1-hidden")

    @property
    def is_classifier(self) -> bool:
        if self.kind == "mlp-1-hidden":
            return self.task == "classification"
        return self.kind == "logistic-classification"

    @property
    def num_classes(self) -> int:
        return 2 if self.output_dim == 1 else self.output_dim

    @property
    def num_params(self) -> int:
        d, o, h = self.input_dim, self.output_dim, self.hidden_dim
        if self.kind == "mlp-1-hidden":
            return (d * h + h) + (h * o + o)
        return d * o + o


def init_params(spec: ModelSpec, rng: np.random.Generator | None = None, scale: float = 0.1) -> ParamVector:
    """Zeros for linear models; small random weights for the mlp (zeros would be a saddle)."""
    if spec.kind != "mlp-1-hidden" or rng is None:
        return np.zeros(spec.num_params)
    return scale * rng.standard_normal(spec.num_params)


def check_loss(spec: ModelSpec, loss: str) -> None:
    if loss not in LOSSES:
        raise ConfigError(f"unknown loss {loss!r}")
    if spec.is_classifier != (loss == "cross-entropy"):
        raise ConfigError(f"loss {loss!r} does not fit a {'classification' if spec.is_classifier else 'regression'} model")


def _unpack(spec: ModelSpec, w: ParamVector):
    d, o, h = spec.input_dim, spec.output_dim, spec.hidden_dim
    if spec.kind == "mlp-1-hidden":
        i = 0
        W1 = w[i:i + d * h].reshape(d, h); i += d * h
        b1 = w[i:i + h]; i += h
        W2 = w[i:i + h * o].reshape(h, o); i += h * o
        b2 = w[i:i + o]
        return W1, b1, W2, b2
    return w[:d * o].reshape(d, o), w[d * o:]


def _check_shapes(spec: ModelSpec, w: ParamVector, x: np.ndarray) -> None:
    if w.ndim != 1 or w.shape[0] != spec.num_params:
        raise ConfigError(f"parameter vector has {w.size} entries, model needs {spec.num_params}")
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigError(f"feature matrix has shape {x.shape}, model expects {spec.input_dim} columns")


def _forward(spec, w, x):
    """Raw outputs plus the hidden activation (None for linear models)."""
    if spec.kind == "mlp-1-hidden":
        W1, b1, W2, b2 = _unpack(spec, w)
        hidden = np.tanh(x @ W1 + b1)
        return hidden @ W2 + b2, hidden
    W, b = _unpack(spec, w)
    return x @ W + b, None


def _probs(z: np.ndarray) -> np.ndarray:
    if z.shape[1] == 1:
        p1 = 1.0 / (1.0 + np.exp(-np.clip(z[:, 0], -500, 500)))
        return np.column_stack([1.0 - p1, p1])
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(spec: ModelSpec, w: ParamVector, x: np.ndarray) -> np.ndarray:
    """Class probabilities (n x num_classes) for classifiers, real outputs (n x output_dim) otherwise."""
    x = np.asarray(x, dtype=float)
    _check_shapes(spec, w, x)
    z, _ = _forward(spec, w, x)
    return _probs(z) if spec.is_classifier else z


def _as_targets(spec, y, n):
    y = np.asarray(y)
    if spec.is_classifier:
        return y.astype(int).reshape(n)
    return y.astype(float).reshape(n, spec.output_dim)


def loss_and_gradient(spec: ModelSpec, loss: str, w: ParamVector, batch) -> tuple[float, ParamVector]:
    """Mean per-sample loss over ``batch`` and its gradient with respect to ``w``."""
    x = np.asarray(batch.features, dtype=float)
    n = x.shape[0] if x.ndim == 2 else 0
    if n == 0:
        raise InvalidInputError("loss_and_gradient needs a non-empty batch")
    _check_shapes(spec, w, x)
    check_loss(spec, loss)
    y = _as_targets(spec, batch.labels, n)
    z, hidden = _forward(spec, w, x)

    if loss == "cross-entropy":
        p = _probs(z)
        value = -np.mean(np.log(np.maximum(p[np.arange(n), y], PROB_FLOOR)))
        if z.shape[1] == 1:
            dz = (p[:, 1] - y).reshape(n, 1) / n
        else:
            dz = p.copy()
            dz[np.arange(n), y] -= 1.0
            dz /= n
    else:
        r = z - y
        # mean over samples and outputs
        value = np.abs(r).mean()
        dz = np.sign(r) / r.size

    if spec.kind == "mlp-1-hidden":
        W1, b1, W2, b2 = _unpack(spec, w)
        gW2 = hidden.T @ dz
        gb2 = dz.sum(axis=0)
        dh = (dz @ W2.T) * (1.0 - hidden ** 2)
        gW1 = x.T @ dh
        gb1 = dh.sum(axis=0)
        grad = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])
    else:
        grad = np.concatenate([(x.T @ dz).ravel(), dz.sum(axis=0)])
    return float(value), grad


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    # classes absent from both truth and prediction are skipped
    scores = []
    for c in range(num_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        if tp + fp + fn == 0:
            continue
        scores.append(2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores)) if scores else 1.0


def smape(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    denom = np.abs(pred) + np.abs(target)
    num = 2.0 * np.abs(pred - target)
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return float(terms.mean())


def evaluate(spec: ModelSpec, w: ParamVector, batch, metric: str = "error-rate") -> float:
    """Score ``w`` on ``batch``; the result is oriented so that larger is worse."""
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}")
    x = np.asarray(batch.features, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidInputError("evaluate needs a non-empty batch")
    out = predict(spec, w, x)
    n = x.shape[0]
    if metric == "smape":
        if spec.is_classifier:
            raise ConfigError("smape needs a regression model")
        return smape(out, _as_targets(spec, batch.labels, n))
    if not spec.is_classifier:
        raise ConfigError(f"{metric} needs a classification model")
    y = _as_targets(spec, batch.labels, n)
    y_hat = np.argmax(out, axis=1)
    if metric == "error-rate":
        return float(np.mean(y_hat != y))
    return 1.0 - macro_f1(y, y_hat, spec.num_classes)
