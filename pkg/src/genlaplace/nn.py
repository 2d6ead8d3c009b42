"""Fully-connected networks with exact backpropagation and MAP training.

Parameters live in a single flat float64 vector ``theta``. Layer ``l`` owns a
weight matrix of shape ``(in_l + 1, out_l)`` whose last row is the bias, and the
matrix is flattened row-major, i.e. the flat index of entry ``(i, j)`` is
``offset_l + i * out_l + j``. Every curvature structure relies on this order.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, NonFiniteLossError, ShapeError, TrainingDivergedError

ACTIVATIONS = ("relu", "tanh")
TASKS = ("regression", "classification")
OPTIMIZERS = ("gd", "gd_momentum")


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer sizes ``[I, hidden..., O]`` plus activation and output head."""

    layer_sizes: tuple
    activation: str = "tanh"
    task: str = "regression"
    bias: bool = True

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigError("need at least an input and an output size", field="layer_sizes")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"layer sizes must be positive, got {sizes}", field="layer_sizes")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", field="activation")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}", field="task")
        if self.task == "classification" and sizes[-1] < 2:
            raise ConfigError("classification needs at least two outputs", field="layer_sizes")

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    @property
    def layer_shapes(self):
        extra = 1 if self.bias else 0
        return [(i + extra, o) for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:])]

    @property
    def layer_slices(self):
        slices, start = [], 0
        for rows, cols in self.layer_shapes:
            slices.append(slice(start, start + rows * cols))
            start += rows * cols
        return slices

    @property
    def n_params(self):
        return sum(r * c for r, c in self.layer_shapes)


def unflatten(arch, theta):
    """Split a flat parameter vector into per-layer ``(in+1, out)`` views."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (arch.n_params,):
        raise ShapeError(f"expected {arch.n_params} parameters, got shape {theta.shape}")
    return [theta[s].reshape(shape) for s, shape in zip(arch.layer_slices, arch.layer_shapes)]


def flatten(weights):
    return np.concatenate([np.asarray(w, dtype=np.float64).ravel() for w in weights])


def init_params(arch, seed=0):
    """Uniform(-s, s) initialisation with ``s = 1/sqrt(in_l)``, bias included."""
    rng = np.random.default_rng(seed)
    blocks = []
    for fan_in, (rows, cols) in zip(arch.layer_sizes[:-1], arch.layer_shapes):
        s = 1.0 / np.sqrt(fan_in)
        blocks.append(rng.uniform(-s, s, size=(rows, cols)))
    return flatten(blocks)


def _activate(name, a):
    if name == "relu":
        return np.maximum(a, 0.0)
    return np.tanh(a)


def _activation_grad(name, a, h):
    if name == "relu":
        return (a > 0.0).astype(np.float64)
    return 1.0 - h * h


def _with_bias(arch, h):
    if not arch.bias:
        return h
    return np.hstack([h, np.ones((h.shape[0], 1))])


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_inputs(arch, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, arch.n_inputs) if arch.n_inputs > 1 else X[:, None]
    if X.ndim != 2 or X.shape[1] != arch.n_inputs:
        raise ShapeError(
            f"layer 0 expects {arch.n_inputs} input columns, got array of shape {X.shape}", layer=0
        )
    return X


def _forward_cache(arch, theta, X):
    X = _check_inputs(arch, X)
    weights = unflatten(arch, theta)
    inputs, pre, post = [], [], []
    h = X
    for l, W in enumerate(weights):
        q = _with_bias(arch, h)
        if q.shape[1] != W.shape[0]:
            raise ShapeError(f"layer {l} expects {W.shape[0]} inputs, got {q.shape[1]}", layer=l)
        a = q @ W
        inputs.append(q)
        pre.append(a)
        h = a if l == arch.n_layers - 1 else _activate(arch.activation, a)
        post.append(h)
    return weights, inputs, pre, post


def forward(arch, theta, X):
    """Network output: logits for classification, predictions for regression."""
    return _forward_cache(arch, theta, X)[3][-1]


def predict_proba(arch, theta, X):
    return softmax(forward(arch, theta, X))


def check_targets(arch, Y, n):
    """Coerce targets to ``(N, O)`` floats or ``(N,)`` integer labels."""
    if arch.task == "regression":
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.shape != (n, arch.n_outputs):
            raise ShapeError(f"expected targets of shape {(n, arch.n_outputs)}, got {Y.shape}")
        return Y
    y = np.asarray(Y)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.shape != (n,):
        raise ShapeError(f"expected {n} class labels, got shape {y.shape}")
    if not np.all(np.equal(np.mod(y, 1), 0)):
        raise ShapeError("class labels must be integers")
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= arch.n_outputs:
        raise ShapeError(f"labels must lie in [0, {arch.n_outputs})")
    return y


def per_sample_nll(arch, out, Y):
    """Negative log-likelihood per datum, additive constants dropped."""
    if arch.task == "regression":
        return 0.5 * np.sum((out - Y) ** 2, axis=1)
    return -log_softmax(out)[np.arange(out.shape[0]), Y]


def output_gradient(arch, out, Y):
    """d nll / d output for every datum (residual or softmax minus one-hot)."""
    if arch.task == "regression":
        return out - Y
    g = softmax(out)
    g[np.arange(out.shape[0]), Y] -= 1.0
    return g


def _backward(arch, weights, pre, post, delta):
    """Pre-activation gradients of every layer, last layer first in ``delta``."""
    deltas = [None] * arch.n_layers
    deltas[-1] = delta
    for l in range(arch.n_layers - 1, 0, -1):
        W = weights[l][: arch.layer_sizes[l]]
        back = deltas[l] @ W.T
        deltas[l - 1] = back * _activation_grad(arch.activation, pre[l - 1], post[l - 1])
    return deltas


def loss_and_gradient(arch, theta, X, Y, prior_std=np.inf, temperature=1.0, batch_index=None):
    """Regularised loss ``T * sum_n nll_n + 0.5 * ||theta||^2 / prior_std^2`` and its gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    weights, inputs, pre, post = _forward_cache(arch, theta, X)
    if inputs[0].shape[0] == 0:
        raise ShapeError("empty batch")
    Y = check_targets(arch, Y, inputs[0].shape[0])
    out = post[-1]
    precision = 0.0 if np.isinf(prior_std) else 1.0 / prior_std**2
    loss = temperature * per_sample_nll(arch, out, Y).sum() + 0.5 * precision * theta @ theta
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss in batch {batch_index}", batch_index=batch_index)
    deltas = _backward(arch, weights, pre, post, output_gradient(arch, out, Y))
    grad = flatten([q.T @ d for q, d in zip(inputs, deltas)])
    return float(loss), temperature * grad + precision * theta


@dataclass
class PerSampleGradients:
    """Per-datum layer inputs ``q`` (with bias 1), pre-activation gradients ``g`` and flat gradients."""

    inputs: list
    output_grads: list
    gradients: np.ndarray

    @property
    def n_samples(self):
        return self.gradients.shape[0]

    def layer_block(self, n, layer):
        return np.outer(self.inputs[layer][n], self.output_grads[layer][n])


def per_sample_backprop(arch, theta, X, Y, check=True):
    """Backpropagate every datum separately, keeping the KFAC ingredients."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters contain non-finite entries")
    weights, inputs, pre, post = _forward_cache(arch, theta, X)
    Y = check_targets(arch, Y, inputs[0].shape[0])
    deltas = _backward(arch, weights, pre, post, output_gradient(arch, post[-1], Y))
    n = inputs[0].shape[0]
    flat = np.concatenate(
        [np.einsum("ni,nj->nij", q, d).reshape(n, -1) for q, d in zip(inputs, deltas)], axis=1
    )
    result = PerSampleGradients(inputs=inputs, output_grads=deltas, gradients=flat)
    if check and n:
        batch_grad = flatten([q.T @ d for q, d in zip(inputs, deltas)])
        err = np.max(np.abs(flat.sum(axis=0) - batch_grad))
        if err > 1e-10 * max(1.0, np.max(np.abs(batch_grad))):
            raise AssertionError(f"per-sample gradients disagree with batch gradient by {err:g}")
    return result


@dataclass(frozen=True)
class TrainConfig:
    prior_std: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 1000
    batch_size: int | None = None
    seed: int = 0
    optimizer: str = "gd_momentum"
    momentum: float = 0.9

    def __post_init__(self):
        if not self.prior_std > 0:
            raise ConfigError(f"prior_std must be positive, got {self.prior_std}", field="prior_std")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ConfigError(
                f"learning_rate must be positive, got {self.learning_rate}", field="learning_rate"
            )
        if int(self.epochs) < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}", field="epochs")
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}", field="batch_size")
        if int(self.seed) < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}", field="seed")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", field="optimizer")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}", field="momentum")


@dataclass
class TrainResult:
    theta: np.ndarray
    trace: list = field(default_factory=list)
    tail_monotone: bool = True

    @property
    def final_loss(self):
        return self.trace[-1][1]


def train_map(arch, X, Y, config, init=None):
    """Minimise the regularised loss by (momentum) gradient descent.

    The step uses the gradient divided by ``N`` so the learning rate does not
    depend on the dataset size; the minimiser is unchanged. Minibatch data
    terms are rescaled by ``N / B``.
    """
    X = _check_inputs(arch, X)
    n = X.shape[0]
    Y = check_targets(arch, Y, n)
    theta = init_params(arch, config.seed) if init is None else np.array(init, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    batch = n if config.batch_size is None else min(int(config.batch_size), n)
    mu = config.momentum if config.optimizer == "gd_momentum" else 0.0
    velocity = np.zeros_like(theta)

    def full_loss(th, epoch):
        try:
            return loss_and_gradient(arch, th, X, Y, config.prior_std, batch_index=epoch)[0]
        except NonFiniteLossError:
            raise TrainingDivergedError(
                f"loss diverged after epoch {epoch - 1}", last_finite_epoch=epoch - 1
            ) from None

    trace = [(0, full_loss(theta, 0))]
    for epoch in range(1, int(config.epochs) + 1):
        order = np.arange(n) if batch == n else rng.permutation(n)
        for b, start in enumerate(range(0, n, batch)):
            idx = order[start : start + batch]
            scale = n / len(idx)
            try:
                _, grad = loss_and_gradient(
                    arch, theta, X[idx], Y[idx], config.prior_std, temperature=scale, batch_index=b
                )
            except NonFiniteLossError:
                raise TrainingDivergedError(
                    f"loss diverged in epoch {epoch}", last_finite_epoch=epoch - 1
                ) from None
            velocity = mu * velocity + grad / n
            theta = theta - config.learning_rate * velocity
        trace.append((epoch, full_loss(theta, epoch)))

    tail = [loss for _, loss in trace[-max(2, len(trace) // 10) :]]
    monotone = all(b <= a + 1e-6 * abs(a) for a, b in zip(tail, tail[1:]))
    if not monotone:
        warnings.warn("training loss was not non-increasing over the final 10% of epochs")
    return TrainResult(theta=theta, trace=trace, tail_monotone=monotone)


def save_checkpoint(path, arch, theta, seed=None, prior_std=None):
    doc = {
        "layer_sizes": list(arch.layer_sizes),
        "activation": arch.activation,
        "task": arch.task,
        "bias": arch.bias,
        "weights": [w.tolist() for w in unflatten(arch, theta)],
        "seed": seed,
        "prior_std": prior_std,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    return doc


def load_checkpoint(path):
    """Read a checkpoint; returns ``(arch, theta, doc)``."""
    doc = json.loads(Path(path).read_text())
    arch = MlpArchitecture(
        tuple(doc["layer_sizes"]), doc["activation"], doc["task"], doc.get("bias", True)
    )
    theta = flatten([np.asarray(w) for w in doc["weights"]])
    if theta.shape != (arch.n_params,):
        raise ShapeError(f"checkpoint holds {theta.size} weights, architecture needs {arch.n_params}")
    return arch, theta, doc
