"""Deterministic synthetic datasets and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.datasets import make_blobs, make_moons

from .exceptions import DatasetError

KINDS = ("cubic_toy", "two_moons", "gaussian_blobs", "heteroskedastic_linear", "csv")


@dataclass
class Dataset:
    """Inputs ``X`` (N, I) and targets: (N, O) floats or (N,) integer labels."""

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.task == "classification":
            self.y = np.asarray(self.y).astype(np.int64).ravel()
        else:
            self.y = np.asarray(self.y, dtype=np.float64)
            if self.y.ndim == 1:
                self.y = self.y[:, None]
        if self.X.shape[0] < 1:
            raise DatasetError("dataset must contain at least one row")
        if self.y.shape[0] != self.X.shape[0]:
            raise DatasetError(f"{self.X.shape[0]} inputs but {self.y.shape[0]} targets")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DatasetError("dataset contains non-finite values")
        if self.task == "classification" and self.y.min() < 0:
            raise DatasetError("class labels must be non-negative")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_classes(self):
        return int(self.y.max()) + 1 if self.task == "classification" else None


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int = 100
    seed: int = 0
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        kind, n, seed = doc.pop("kind"), doc.pop("n", 100), doc.pop("seed", 0)
        params = dict(doc.pop("params", {}))
        params.update(doc)
        return cls(kind=kind, n=int(n), seed=int(seed), params=params)


def rotate_translate(X, shift=None, rotation_deg=0.0):
    """Rotate 2-D inputs about the origin, then translate."""
    X = np.asarray(X, dtype=np.float64)
    if rotation_deg:
        if X.shape[1] != 2:
            raise DatasetError("rotation is only defined for 2-D inputs")
        a = np.deg2rad(rotation_deg)
        R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        X = X @ R.T
    if shift is not None:
        X = X + np.asarray(shift, dtype=np.float64)
    return X


def generate(spec):
    """Build a dataset from a :class:`GeneratorSpec`; pure in ``spec``."""
    if isinstance(spec, dict):
        spec = GeneratorSpec.from_dict(spec)
    if spec.kind not in KINDS:
        raise DatasetError(f"unknown dataset kind {spec.kind!r}")
    if spec.n < 1:
        raise DatasetError(f"dataset size must be positive, got {spec.n}")
    p = spec.params
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "csv":
        return load_csv(p["path"], task=p.get("task", "regression"))
    if spec.kind == "cubic_toy":
        x = rng.uniform(p.get("low", -4.0), p.get("high", 4.0), size=spec.n)
        y = x**3 + p.get("noise_std", 3.0) * rng.standard_normal(spec.n)
        ds = Dataset(x[:, None], y[:, None], "regression", "cubic_toy")
    elif spec.kind == "heteroskedastic_linear":
        x = rng.uniform(-1.0, 1.0, size=spec.n)
        std = p.get("s0", 0.1) + p.get("s1", 1.0) * np.abs(x)
        y = p.get("slope", 1.0) * x + p.get("intercept", 0.0) + std * rng.standard_normal(spec.n)
        ds = Dataset(x[:, None], y[:, None], "regression", "heteroskedastic_linear")
    elif spec.kind == "two_moons":
        X, y = make_moons(n_samples=spec.n, noise=p.get("noise", 0.1), random_state=spec.seed)
        ds = Dataset(X, y, "classification", "two_moons")
    else:
        X, y = make_blobs(
            n_samples=spec.n,
            centers=p.get("centers", 2),
            n_features=p.get("n_features", 2),
            cluster_std=p.get("cluster_std", 1.0),
            random_state=spec.seed,
        )
        ds = Dataset(X, y, "classification", "gaussian_blobs")
    if "shift" in p or p.get("rotation"):
        ds.X = rotate_translate(ds.X, p.get("shift"), p.get("rotation", 0.0))
        ds.name += "_shifted"
    return ds


def train_test_split(dataset, test_fraction=0.25, seed=0):
    """Disjoint, exhaustive random split."""
    n = len(dataset)
    n_test = int(round(test_fraction * n))
    if not 0 < n_test < n:
        raise DatasetError(f"test_fraction {test_fraction} leaves an empty split for N={n}")
    order = np.random.default_rng(seed).permutation(n)
    test, train = np.sort(order[:n_test]), np.sort(order[n_test:])
    make = lambda idx, tag: Dataset(dataset.X[idx], dataset.y[idx], dataset.task, f"{dataset.name}_{tag}")
    return make(train, "train"), make(test, "test")


def _header(dataset):
    xs = [f"x{i}" for i in range(dataset.X.shape[1])]
    if dataset.task == "classification":
        return xs + ["label"]
    if dataset.y.shape[1] == 1:
        return xs + ["y"]
    return xs + [f"y{j}" for j in range(dataset.y.shape[1])]


def write_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(dataset))
        for x, t in zip(dataset.X, dataset.y):
            if dataset.task == "classification":
                target = [str(int(t))]
            else:
                target = [repr(float(v)) for v in t]
            w.writerow([repr(float(v)) for v in x] + target)


def load_csv(path, task="regression", name=None):
    """Read ``x0,...,x{I-1},y`` (or ``label``) with a one-line header."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and not r[0].startswith("#")]
    if not rows:
        raise DatasetError(f"{path} is empty")
    line, header = rows[0]
    header = [h.strip() for h in header]
    n_x = sum(1 for h in header if h.startswith("x"))
    if header[:n_x] != [f"x{i}" for i in range(n_x)] or n_x == 0:
        raise DatasetError(f"header must start with x0..x{{I-1}}, got {header}", line=line)
    targets = header[n_x:]
    if task == "classification":
        if targets != ["label"]:
            raise DatasetError(f"classification CSV needs a single 'label' column, got {targets}", line=line)
    elif targets != ["y"] and targets != [f"y{j}" for j in range(len(targets))] or not targets:
        raise DatasetError(f"regression CSV needs target column 'y' or y0..y{{O-1}}, got {targets}", line=line)
    data = []
    for line, r in rows[1:]:
        if len(r) != len(header):
            raise DatasetError(f"line {line}: expected {len(header)} fields, got {len(r)}", line=line)
        try:
            data.append([float(v) for v in r])
        except ValueError:
            raise DatasetError(f"line {line}: non-numeric value in {r}", line=line) from None
    if not data:
        raise DatasetError(f"{path} has a header but no rows")
    arr = np.array(data)
    y = arr[:, n_x:]
    if task == "classification":
        if not np.all(y == np.round(y)):
            raise DatasetError("labels must be integers")
        y = y[:, 0]
    return Dataset(arr[:, :n_x], y, task, name or path.stem)
