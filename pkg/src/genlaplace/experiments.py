"""End-to-end experiment runners returning plain row dictionaries."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .curvature import estimate_fisher, normalize_kind, temper
from .datasets import GeneratorSpec, generate
from .exceptions import ConfigError
from .nn import MlpArchitecture, TrainConfig, forward, train_map
from .posterior import build
from .predictive import DEFAULT_MC_SAMPLES, evaluate, map_metrics, mc_predict
from . import theory

DEFAULT_TEMPERATURES = tuple(float(t) for t in np.logspace(-2, 1, 13))
TOY_GRID = np.round(np.arange(-6.0, 6.0 + 1e-9, 0.05), 10)


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "cubic_toy", "n": 100})
    test_dataset: dict | None = None
    ood_dataset: dict | None = None
    hidden_sizes: tuple = (7, 7)
    activation: str = "tanh"
    train: dict = field(default_factory=dict)
    kinds: tuple = ("kfac", "diag", "ekfac", "blockdiag")
    temperatures: tuple = DEFAULT_TEMPERATURES
    temperature: float = 1.0
    n_samples: int = DEFAULT_MC_SAMPLES
    seeds: tuple = (0,)
    fisher_type: str = "empirical"
    output_dir: str | None = None
    theory: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.kinds = tuple(normalize_kind(k) for k in self.kinds)
        self.temperatures = tuple(float(t) for t in self.temperatures)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.kinds:
            raise ConfigError("at least one curvature kind is required", field="kinds")
        if not self.temperatures or any(not t > 0 for t in self.temperatures):
            raise ConfigError("temperatures must be strictly positive", field="temperatures")
        if list(self.temperatures) != sorted(self.temperatures):
            raise ConfigError("temperatures must be sorted ascending", field="temperatures")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive", field="temperature")
        if int(self.n_samples) < 1:
            raise ConfigError("n_samples must be at least 1", field="n_samples")
        if not self.seeds or any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative", field="seeds")
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(self.train) - known
        if unknown:
            raise ConfigError(f"unknown train fields {sorted(unknown)}", field="train")
        self.train_config(self.seeds[0])

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}", field=sorted(unknown)[0])
        return cls(**doc)

    def to_dict(self):
        return asdict(self)

    def train_config(self, seed):
        try:
            return TrainConfig(**{**self.train, "seed": seed})
        except ConfigError as err:
            raise ConfigError(f"train.{err.field}: {err}", field=f"train.{err.field}") from None

    def dataset_spec(self, which, seed):
        doc = {"dataset": self.dataset, "test": self.test_dataset, "ood": self.ood_dataset}[which]
        if doc is None:
            if which == "ood":
                raise ConfigError("this command needs an ood_dataset", field="ood_dataset")
            doc = {**self.dataset, "n": 500}
        offset = {"dataset": 0, "test": 1000, "ood": 2000}[which]
        spec = GeneratorSpec.from_dict(doc)
        return replace(spec, seed=spec.seed + seed + offset)

    def architecture(self, data):
        task = data.task
        n_out = data.y.shape[1] if task == "regression" else data.n_classes
        return MlpArchitecture((data.X.shape[1], *self.hidden_sizes, n_out), self.activation, task)


def toy_config(**overrides):
    base = dict(
        dataset={"kind": "cubic_toy", "n": 100},
        hidden_sizes=(7, 7),
        activation="tanh",
        train={"prior_std": 1.0, "learning_rate": 1e-3, "epochs": 50000},
        kinds=("kfac", "diag", "ekfac", "blockdiag"),
        temperature=1.0,
        seeds=(0, 1, 2, 3, 4),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def classification_config(**overrides):
    base = dict(
        dataset={"kind": "two_moons", "n": 200, "noise": 0.15},
        test_dataset={"kind": "two_moons", "n": 500, "noise": 0.15},
        ood_dataset={"kind": "two_moons", "n": 500, "noise": 0.15, "shift": [3.0, 3.0], "rotation": 90.0},
        hidden_sizes=(16,),
        activation="relu",
        train={"prior_std": 1.0, "learning_rate": 0.05, "epochs": 3000},
        kinds=("diag", "kfac", "ekfac"),
        seeds=(0, 1, 2, 3, 4),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass
class FittedRun:
    arch: MlpArchitecture
    data: object
    theta: np.ndarray
    trace: list
    curvatures: dict


def fit_run(config, seed, kinds=None):
    """Train one network and estimate every requested curvature."""
    data = generate(config.dataset_spec("dataset", seed))
    arch = config.architecture(data)
    tc = config.train_config(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = train_map(arch, data.X, data.y, tc)
    curvs = {
        k: estimate_fisher(k, arch, result.theta, data.X, data.y, fisher_type=config.fisher_type, seed=seed)
        for k in (kinds or config.kinds)
    }
    return FittedRun(arch, data, result.theta, result.trace, curvs)


def run_train(config, seed=None):
    seed = config.seeds[0] if seed is None else seed
    run = fit_run(config, seed, kinds=())
    return run


def run_toy_regression(config, grid=TOY_GRID):
    """Predictive bands per (seed, kind) plus a per-kind mean-std summary."""
    bands, summary = [], []
    X = grid[:, None]
    for seed in config.seeds:
        run = fit_run(config, seed)
        if run.arch.task != "regression":
            raise ConfigError("toy-regression needs a regression dataset", field="dataset")
        map_pred = forward(run.arch, run.theta, X)[:, 0]
        prior_std = config.train_config(seed).prior_std
        for kind in config.kinds:
            post = build(run.theta, temper(run.curvatures[kind], config.temperature, prior_std), seed)
            res = mc_predict(run.arch, post, X, config.n_samples, seed=seed)
            for x, m, s, mp in zip(grid, res.mean[:, 0], res.std[:, 0], map_pred):
                bands.append({"seed": seed, "kind": kind, "x_grid": x, "mean": m, "std": s, "map": mp})
            summary.append(
                {"seed": seed, "kind": kind, "temperature": config.temperature, "mean_std": float(res.std.mean())}
            )
    return bands, summary


def run_sweep(config):
    """One evaluation per (seed, T, kind) on held-out in-distribution data."""
    rows = []
    for seed in config.seeds:
        run = fit_run(config, seed)
        test = generate(config.dataset_spec("test", seed))
        prior_std = config.train_config(seed).prior_std
        base = map_metrics(run.arch, run.theta, test.X, test.y)
        for T in config.temperatures:
            for kind in config.kinds:
                post = build(run.theta, temper(run.curvatures[kind], T, prior_std), seed)
                m = evaluate(run.arch, post, test.X, test.y, config.n_samples, seed=seed)
                rows.append({"seed": seed, "temperature": T, "kind": kind, **m, "map_accuracy": base["accuracy"]})
    return rows


def run_ood(config):
    """Mean predictive entropy on in-distribution vs shifted data, per (seed, T, kind)."""
    rows = []
    for seed in config.seeds:
        run = fit_run(config, seed)
        test = generate(config.dataset_spec("test", seed))
        ood = generate(config.dataset_spec("ood", seed))
        prior_std = config.train_config(seed).prior_std
        for T in config.temperatures:
            for kind in config.kinds:
                post = build(run.theta, temper(run.curvatures[kind], T, prior_std), seed)
                m_in = evaluate(run.arch, post, test.X, test.y, config.n_samples, seed=seed)
                m_out = evaluate(run.arch, post, ood.X, ood.y, config.n_samples, seed=seed)
                rows.append(
                    {
                        "seed": seed,
                        "temperature": T,
                        "kind": kind,
                        "in_entropy": m_in["mean_entropy"],
                        "ood_entropy": m_out["mean_entropy"],
                        "ood_below_in": int(m_out["mean_entropy"] < m_in["mean_entropy"]),
                    }
                )
    return rows


IDENTITY_TOLERANCE = 1e-10


def run_theory(config):
    """All finite-model checks; returns ``{report name: rows}`` and the list of breached checks."""
    opts = config.theory
    rng = np.random.default_rng(opts.get("seed", 0))
    reports, breaches = {}, []

    rows = []
    thetas = rng.normal(scale=3.0, size=(opts.get("identity_samples", 1000), opts.get("identity_dim", 5)))
    for T in opts.get("identity_temperatures", (0.1, 1.0, 4.0)):
        for beta in opts.get("identity_prior_stds", (0.5, 1.0, 2.0)):
            dev = theory.prior_rescale_identity(beta, T, thetas)
            rows.append({"temperature": T, "prior_std": beta, "deviation": dev})
            if not dev < IDENTITY_TOLERANCE:
                breaches.append(f"prior_rescale_identity(T={T}, prior_std={beta}) deviation {dev:g}")
    reports["identity"] = rows

    model = (
        theory.FiniteModel.from_dict(opts["model"])
        if "model" in opts
        else theory.FiniteModel.bernoulli(opts.get("hypotheses", (0.3, 0.6)), opts.get("p_true", 0.5))
    )
    rows = []
    for T in opts.get("mass_temperatures", (0.001, 0.01, 0.1, 0.5, 1.0, 2.0)):
        cc = theory.central_condition_mass(model, T)
        for i, h in enumerate(model.hypotheses):
            rows.append(
                {
                    "temperature": T,
                    "hypothesis": h,
                    "risk": cc.risks[i],
                    "is_risk_minimizer": int(i == cc.risk_minimizer),
                    "mass": cc.masses[i],
                }
            )
        if cc.masses[cc.risk_minimizer] != 1.0:
            breaches.append(f"central_condition_mass(T={T}) minimiser mass {cc.masses[cc.risk_minimizer]}")
    reports["central_condition"] = rows

    rows = []
    observed = opts.get("observed", [(0, 1)])
    for T in (0.0, *opts.get("posterior_temperatures", (0.5, 1.0, 2.0))):
        for form in theory.FORMS:
            post = theory.tempered_grid_posterior(model, observed, T, form)
            for i, h in enumerate(model.hypotheses):
                rows.append({"temperature": T, "form": form, "hypothesis": h, "prior": model.prior[i], "posterior": post.weights[i]})
                if T == 0 and form == "likelihood_only" and post.weights[i] != model.prior[i]:
                    breaches.append("T=0 posterior differs from prior")
    reports["grid_posterior"] = rows

    probs = np.asarray(opts.get("aleatoric_probs", [[0.9, 0.1], [0.4, 0.6]]))
    prior = np.full(len(probs), 1.0 / len(probs))
    rows = []
    for form in theory.FORMS:
        for T in opts.get("aleatoric_temperatures", (0.1, 0.5, 1.0, 2.0, 10.0)):
            rows.append({"form": form, "temperature": T, "p_other_label": theory.aleatoric_probability(probs, prior, 0, T, form)})
    reports["aleatoric"] = rows

    demo = theory.misspecification_demo(theory.MisspecificationConfig(**opts.get("misspecification", {})))
    reports["misspecification"] = demo.tier_masses
    reports["misspecification_risk"] = [
        {"slope": h[0], "intercept": h[1], "noise_std": h[2], "tier": h[3], "risk": r}
        for h, r in zip(demo.hypotheses, demo.risks)
    ]
    return reports, breaches
