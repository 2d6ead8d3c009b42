"""Exact computations on finite hypothesis grids.

Tempered grid posteriors, the Gaussian prior-rescaling identity, the
central-condition mass of the tempered model family, the aleatoric
probability curve and a misspecified linear-regression demo. Everything is
summed exactly in log space; nothing is sampled except the demo's data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .datasets import GeneratorSpec, generate

FORMS = ("likelihood_only", "likelihood_and_prior")


@dataclass
class FiniteModel:
    """Hypotheses with prior weights, a finite outcome space and likelihood tables.

    ``likelihood[i, k]`` is ``h(y_k | x_k, theta_i)`` for outcome ``k = (x_k, y_k)``
    and ``truth[k]`` is the true joint probability ``h*(x_k, y_k)``.
    """

    hypotheses: list
    prior: np.ndarray
    outcomes: list
    truth: np.ndarray
    likelihood: np.ndarray

    def __post_init__(self):
        self.prior = np.asarray(self.prior, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.float64)
        self.likelihood = np.asarray(self.likelihood, dtype=np.float64)
        self.outcomes = [tuple(o) for o in self.outcomes]
        H, K = len(self.hypotheses), len(self.outcomes)
        if self.prior.shape != (H,) or self.truth.shape != (K,) or self.likelihood.shape != (H, K):
            raise ValueError("prior, truth and likelihood shapes disagree with hypotheses/outcomes")
        if np.any(self.prior < 0) or abs(self.prior.sum() - 1) > 1e-12:
            raise ValueError("prior weights must be non-negative and sum to 1")
        if np.any(self.truth < 0) or abs(self.truth.sum() - 1) > 1e-12:
            raise ValueError("true outcome probabilities must be non-negative and sum to 1")
        if np.any(self.likelihood < 0):
            raise ValueError("likelihoods must be non-negative")
        for x in {o[0] for o in self.outcomes}:
            cols = [k for k, o in enumerate(self.outcomes) if o[0] == x]
            sums = self.likelihood[:, cols].sum(axis=1)
            if np.any(np.abs(sums - 1) > 1e-12):
                raise ValueError(f"likelihood over y does not sum to 1 at x={x!r}")

    def outcome_index(self, outcome):
        if isinstance(outcome, (int, np.integer)):
            return int(outcome)
        return self.outcomes.index(tuple(outcome))

    @classmethod
    def bernoulli(cls, hypotheses, p_true, prior=None):
        """Coin-flip model: one input, ``y in {0, 1}``, ``h(1 | theta) = theta``."""
        hyp = [float(h) for h in hypotheses]
        prior = np.full(len(hyp), 1.0 / len(hyp)) if prior is None else prior
        lik = np.array([[1 - h, h] for h in hyp])
        return cls(hyp, prior, [(0, 0), (0, 1)], [1 - p_true, p_true], lik)

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["hypotheses"], doc["prior"], doc["outcomes"], doc["truth"], doc["likelihood"])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "hypotheses": list(self.hypotheses),
            "prior": self.prior.tolist(),
            "outcomes": [list(o) for o in self.outcomes],
            "truth": self.truth.tolist(),
            "likelihood": self.likelihood.tolist(),
        }


@dataclass
class TemperedGridPosterior:
    weights: np.ndarray
    temperature: float
    form: str


def tempered_log_weights(log_lik, log_prior, temperature, form="likelihood_only"):
    """Normalised log posterior ``T * log_lik + c * log_prior`` with ``c = 1`` or ``T``."""
    if form not in FORMS:
        raise ValueError(f"unknown tempering form {form!r}")
    if temperature < 0:
        raise ValueError(f"temperature must be non-negative, got {temperature}")
    log_lik = np.asarray(log_lik, dtype=np.float64)
    log_prior = np.asarray(log_prior, dtype=np.float64)
    prior_scale = temperature if form == "likelihood_and_prior" else 1.0
    if temperature == 0:
        lik_term = np.zeros_like(log_lik)
        # prior**0 is 1 on the prior's support and 0 off it
        prior_term = np.where(np.isfinite(log_prior), 0.0, -np.inf) if prior_scale == 0 else log_prior
    else:
        lik_term = temperature * log_lik
        prior_term = prior_scale * log_prior
    joint = lik_term + prior_term
    if not np.any(np.isfinite(joint)):
        raise ValueError("all hypotheses have zero joint mass")
    return joint - logsumexp(joint)


def tempered_grid_posterior(model, observed, temperature, form="likelihood_only"):
    """Posterior over hypotheses ``∝ prod_n h(y_n|x_n,θ)^T p(θ)`` (or ``p(θ)^T``)."""
    idx = [model.outcome_index(o) for o in observed]
    if temperature == 0 and form == "likelihood_only":
        return TemperedGridPosterior(model.prior.copy(), 0.0, form)
    with np.errstate(divide="ignore"):
        log_lik = np.log(model.likelihood[:, idx]).sum(axis=1) if idx else np.zeros(len(model.prior))
        log_prior = np.log(model.prior)
    logw = tempered_log_weights(log_lik, log_prior, temperature, form)
    w = np.exp(logw)
    return TemperedGridPosterior(w / w.sum(), float(temperature), form)


def prior_rescale_identity(prior_std, temperature, thetas):
    """Largest deviation of ``(1/T) log N(θ; 0, β²I) - log N(θ; 0, Tβ²I)`` from its constant.

    The difference is independent of ``θ``; the constant is
    ``d/2 * (log(2π T β²) - log(2π β²) / T)`` for ``d``-dimensional ``θ``.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    T, beta = float(temperature), float(prior_std)
    d = thetas.shape[1]
    lhs = norm.logpdf(thetas, scale=beta).sum(axis=1) / T
    rhs = norm.logpdf(thetas, scale=np.sqrt(T) * beta).sum(axis=1)
    const = 0.5 * d * (np.log(2 * np.pi * T * beta**2) - np.log(2 * np.pi * beta**2) / T)
    return float(np.max(np.abs(lhs - rhs - const)))


@dataclass
class CentralConditionResult:
    risk_minimizer: int
    risks: np.ndarray
    masses: np.ndarray
    temperature: float

    @property
    def satisfied(self):
        return bool(np.all(self.masses <= 1 + 1e-12))


def expected_risks(model):
    """Expected NLL of every hypothesis under the true outcome distribution."""
    support = model.truth > 0
    with np.errstate(divide="ignore"):
        return -(model.truth[support] * np.log(model.likelihood[:, support])).sum(axis=1)


def central_condition_mass(model, temperature):
    """Total mass ``sum_{x,y} h*(x,y) (h(y|x,θ) / h(y|x,θ̃))^T`` for every ``θ``."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    risks = expected_risks(model)
    best = int(np.argmin(risks))
    support = model.truth > 0
    ref = model.likelihood[best, support]
    if np.any(ref == 0):
        raise ValueError("risk minimiser assigns zero likelihood to a supported outcome")
    ratios = model.likelihood[:, support] / ref
    masses = (model.truth[support] * ratios**temperature).sum(axis=1)
    masses[best] = 1.0
    return CentralConditionResult(best, risks, masses, float(temperature))


def aleatoric_probability(class_probs, prior, label, temperature, form="likelihood_and_prior"):
    """``E_{p_T(θ|x,y)}[sum_{y' != y} softmax(f(x,θ))_{y'}]`` on a finite grid.

    ``class_probs[i]`` is the class distribution of hypothesis ``i`` at ``x``.
    """
    class_probs = np.asarray(class_probs, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logw = tempered_log_weights(np.log(class_probs[:, label]), np.log(prior), temperature, form)
    w = np.exp(logw)
    return float(w @ (1.0 - class_probs[:, label]) / w.sum())


def aleatoric_curve(class_probs, prior, label, temperatures, form="likelihood_and_prior"):
    return np.array([aleatoric_probability(class_probs, prior, label, t, form) for t in temperatures])


@dataclass(frozen=True)
class MisspecificationConfig:
    """Heteroskedastic generator plus a grid of fixed-noise linear models.

    The simple tier fixes the intercept at 0; the complex tier adds every
    nonzero intercept in ``intercepts``.
    """

    slope: float = 1.0
    intercept: float = 0.0
    s0: float = 0.1
    s1: float = 1.0
    slopes: tuple = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5)
    intercepts: tuple = (-0.5, -0.25, 0.25, 0.5)
    noise_stds: tuple = (0.25, 0.5, 1.0)
    sizes: tuple = (0, 10, 100, 1000)
    temperatures: tuple = (0.25, 1.0)
    seed: int = 0


@dataclass
class MisspecificationReport:
    hypotheses: list
    risks: np.ndarray
    tier_masses: list = field(default_factory=list)
    posteriors: dict = field(default_factory=dict)


def linear_grid(config):
    """Hypotheses ``(slope, intercept, noise_std, tier)`` and their prior (half mass per tier)."""
    simple = [(a, 0.0, s, "simple") for a in config.slopes for s in config.noise_stds]
    complex_ = [(a, b, s, "complex") for a in config.slopes for b in config.intercepts if b != 0 for s in config.noise_stds]
    hyps = simple + complex_
    prior = np.array([0.5 / len(simple)] * len(simple) + [0.5 / len(complex_)] * len(complex_))
    return hyps, prior


def linear_model_risk(hyp, config):
    """Exact expected Gaussian NLL under ``x ~ U(-1,1)``, ``y = a x + b + (s0 + s1|x|) eps``."""
    a, b, s, _ = hyp
    da, db = config.slope - a, config.intercept - b
    mean_sq = da**2 / 3 + db**2 + config.s0**2 + config.s0 * config.s1 + config.s1**2 / 3
    return 0.5 * np.log(2 * np.pi * s**2) + mean_sq / (2 * s**2)


def misspecification_demo(config=None):
    """Tempered grid posterior mass per complexity tier as the sample grows."""
    config = config or MisspecificationConfig()
    hyps, prior = linear_grid(config)
    n_max = max(max(config.sizes), 1)
    data = generate(
        GeneratorSpec(
            "heteroskedastic_linear",
            n=n_max,
            seed=config.seed,
            params=dict(slope=config.slope, intercept=config.intercept, s0=config.s0, s1=config.s1),
        )
    )
    x, y = data.X[:, 0], data.y[:, 0]
    a = np.array([h[0] for h in hyps])[:, None]
    b = np.array([h[1] for h in hyps])[:, None]
    s = np.array([h[2] for h in hyps])[:, None]
    loglik = -0.5 * np.log(2 * np.pi * s**2) - (y[None, :] - a * x[None, :] - b) ** 2 / (2 * s**2)
    cum = np.concatenate([np.zeros((len(hyps), 1)), np.cumsum(loglik, axis=1)], axis=1)
    tiers = np.array([h[3] for h in hyps])
    report = MisspecificationReport(hyps, np.array([linear_model_risk(h, config) for h in hyps]))
    for n in config.sizes:
        for t in config.temperatures:
            w = np.exp(tempered_log_weights(cum[:, n], np.log(prior), t))
            report.posteriors[(n, t)] = w
            for tier in ("simple", "complex"):
                report.tier_masses.append({"n": n, "temperature": t, "tier": tier, "mass": float(w[tiers == tier].sum())})
    return report
