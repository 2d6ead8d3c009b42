"""scikit-learn estimators wrapping MAP training plus a tempered Laplace posterior."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .curvature import estimate_fisher, normalize_kind, temper
from .nn import MlpArchitecture, TrainConfig, forward, train_map
from .posterior import build
from .predictive import mc_predict


class _LaplaceMLPBase(BaseEstimator):
    def __init__(
        self,
        hidden_layer_sizes=(7, 7),
        activation="tanh",
        prior_std=1.0,
        temperature=1.0,
        curvature="kfac",
        fisher_type="empirical",
        n_samples=50,
        learning_rate=1e-3,
        epochs=2000,
        batch_size=None,
        optimizer="gd_momentum",
        momentum=0.9,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.prior_std = prior_std
        self.temperature = temperature
        self.curvature = curvature
        self.fisher_type = fisher_type
        self.n_samples = n_samples
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.momentum = momentum
        self.random_state = random_state

    def _seed(self):
        return 0 if self.random_state is None else int(self.random_state)

    def _fit_network(self, X, targets, task, n_out):
        sizes = (X.shape[1], *tuple(self.hidden_layer_sizes), n_out)
        self.arch_ = MlpArchitecture(sizes, self.activation, task)
        config = TrainConfig(
            prior_std=self.prior_std,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self._seed(),
            optimizer=self.optimizer,
            momentum=self.momentum,
        )
        self.train_result_ = train_map(self.arch_, X, targets, config)
        self.theta_map_ = self.train_result_.theta
        self.curvature_ = estimate_fisher(
            normalize_kind(self.curvature), self.arch_, self.theta_map_, X, targets,
            fisher_type=self.fisher_type, seed=self._seed(),
        )
        self.posterior_ = build(self.theta_map_, temper(self.curvature_, self.temperature, self.prior_std), self._seed())
        self.n_features_in_ = X.shape[1]
        return self

    def retemper(self, temperature):
        """Rebuild the posterior at a new temperature without retraining."""
        check_is_fitted(self, "curvature_")
        self.temperature = temperature
        self.posterior_ = build(self.theta_map_, temper(self.curvature_, temperature, self.prior_std), self._seed())
        return self

    def _check_X(self, X):
        check_is_fitted(self, "posterior_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, estimator was fitted with {self.n_features_in_}")
        return X


class LaplaceMLPRegressor(RegressorMixin, _LaplaceMLPBase):
    """MLP regressor with unit-noise Gaussian likelihood and a tempered Laplace posterior.

    ``predict`` returns the Monte Carlo predictive mean; ``return_std=True``
    also returns the predictive std including the unit observation noise.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True, y_numeric=True)
        self._single_output = y.ndim == 1
        Y = y[:, None] if y.ndim == 1 else y
        return self._fit_network(X, Y, "regression", Y.shape[1])

    def predict(self, X, return_std=False):
        X = self._check_X(X)
        res = mc_predict(self.arch_, self.posterior_, X, self.n_samples, seed=self._seed())
        mean, std = res.mean, res.std
        if self._single_output:
            mean, std = mean[:, 0], std[:, 0]
        return (mean, std) if return_std else mean

    def predict_map(self, X):
        out = forward(self.arch_, self.theta_map_, self._check_X(X))
        return out[:, 0] if self._single_output else out


class LaplaceMLPClassifier(ClassifierMixin, _LaplaceMLPBase):
    """Softmax MLP classifier whose probabilities are averaged over posterior draws."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        return self._fit_network(X, self._encoder.transform(y), "classification", len(self.classes_))

    def predict_proba(self, X):
        X = self._check_X(X)
        return mc_predict(self.arch_, self.posterior_, X, self.n_samples, seed=self._seed()).probs

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
