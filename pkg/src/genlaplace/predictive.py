"""Monte Carlo model averaging and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import check_targets, forward, softmax

DEFAULT_MC_SAMPLES = 50
OBSERVATION_VARIANCE = 1.0


@dataclass
class PredictiveResult:
    """Averaged predictions.

    ``probs`` is set for classification; ``mean`` and ``std`` for regression.
    """

    sample_count: int
    seed: int | None
    probs: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None


def mc_predict(arch, posterior, X, n_samples=DEFAULT_MC_SAMPLES, seed=0, samples=None):
    """Average the network's predictive distribution over posterior draws.

    ``samples`` bypasses the posterior with explicit ``(S, P)`` parameters.
    Regression std combines the spread of sampled means with the unit
    observation noise of the likelihood.
    """
    if samples is None:
        if int(n_samples) < 1:
            raise ValueError(f"n_samples must be at least 1, got {n_samples}")
        samples = posterior.sample(n_samples, seed=seed)
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    S = samples.shape[0]
    outs = np.stack([forward(arch, th, X) for th in samples])
    if arch.task == "classification":
        probs = softmax(outs).mean(axis=0)
        return PredictiveResult(S, seed, probs=probs / probs.sum(axis=1, keepdims=True))
    mean = outs.mean(axis=0)
    var = outs.var(axis=0) + OBSERVATION_VARIANCE
    return PredictiveResult(S, seed, mean=mean, std=np.sqrt(var))


def entropy(p, axis=-1):
    """Shannon entropy in nats, ``0 log 0 = 0``; rows are renormalised first."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    total = p.sum(axis=axis, keepdims=True)
    if np.any(np.abs(total - 1.0) > 1e-6):
        raise ValueError("probabilities must sum to 1 within 1e-6")
    p = p / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return np.maximum(terms.sum(axis=axis), 0.0)


def classification_metrics(probs, labels):
    """Accuracy (first-index argmax), mean entropy and mean NLL of averaged probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    picked = probs[np.arange(labels.size), labels]
    return {
        "accuracy": float(np.mean(np.argmax(probs, axis=1) == labels)),
        "mean_entropy": float(np.mean(entropy(probs))),
        "mean_nll": float(np.mean(-np.log(np.maximum(picked, np.finfo(float).tiny)))),
    }


def evaluate(arch, posterior, X, y, n_samples=DEFAULT_MC_SAMPLES, seed=0, samples=None):
    """Classification metrics of the MC predictive on a labelled dataset."""
    if arch.task != "classification":
        raise ValueError("evaluate expects a classification architecture")
    y = check_targets(arch, y, np.asarray(X).shape[0])
    result = mc_predict(arch, posterior, X, n_samples, seed, samples=samples)
    return classification_metrics(result.probs, y)


def map_metrics(arch, theta, X, y):
    """Metrics of the deterministic network at ``theta``."""
    y = check_targets(arch, y, np.asarray(X).shape[0])
    return classification_metrics(softmax(forward(arch, theta, X)), y)
